import pytest
from hypothesis import given, strategies as st

from deam.accumulator import Choice
from deam.attention import FixationTarget, default_fixation_config
from deam.core import LANE_CHANGE_PARAMS, ScenarioKind
from deam.experiment import build_batch, run_batch, to_records
from deam.records import (
    COLUMNS,
    SchemaError,
    TrialRecord,
    decode_fixations,
    dumps_records,
    encode_fixations,
    loads_records,
)

LC, CF = ScenarioKind.LANE_CHANGE, ScenarioKind.CAR_FOLLOW
FV, RV = FixationTarget.FV, FixationTarget.RV

HEADER = ",".join(COLUMNS)


def test_simulated_round_trip_is_byte_identical():
    res = run_batch(build_batch(LC, 2, 4), LANE_CHANGE_PARAMS, default_fixation_config(LC), 1)
    recs = to_records(res)
    text = dumps_records(recs, ["config_hash=abc", "seed=1"])
    back, comments = loads_records(text)
    assert back == recs and comments == ["config_hash=abc", "seed=1"]
    assert dumps_records(back, comments) == text


def test_record_fixations_agree_with_outcome():
    res = run_batch(build_batch(LC, 1, 3), LANE_CHANGE_PARAMS, default_fixation_config(LC), 2)
    for r in res:
        record = r.to_record()
        assert sum(d for _, d in record.fixations) == record.rt_ms
        assert len(record.fixations) - 1 == record.n_switches
        assert record.fixations[-1][0] is record.last_fixation


def test_rows_for_human_fixture_without_fixations():
    text = HEADER + "\n" + "0,0,lane_change,3,1,2,2,upper,812,1,RV,\n"
    (r,), _ = loads_records(text)
    assert r.fixations is None and r.rt == 0.812 and r.last_on_option_one


@pytest.mark.parametrize("row,fragment", [
    ("0,0,lane_change,3,1,1,2,upper,812,1,RV,", "bias/clarity"),
    ("0,0,lane_change,3,1,2,2,upper,0,1,RV,", "rt_ms"),
    ("0,0,lane_change,3,1,2,2,maybe,812,1,RV,", "maybe"),
    ("0,0,car_follow,3,1,2,2,upper,812,1,FV,", "z2"),
    ("0,0,lane_change,3,1,2,2,upper,812,1,NonFV,", "last_fixation"),
    ("0,0,lane_change,3,1,2,2,upper,812,-1,RV,", "n_switches"),
    ("0,0,lane_change,3,1,2,2,upper,812,1,RV,XX:3", "XX"),
])
def test_bad_rows_report_row_number(row, fragment):
    good = "1,0,lane_change,2,2,0,0,lower,500,0,FV,"
    with pytest.raises(SchemaError) as exc:
        loads_records(HEADER + "\n" + good + "\n" + row + "\n")
    assert exc.value.row == 2
    assert fragment in str(exc.value)


def test_empty_and_header_only():
    with pytest.raises(SchemaError):
        loads_records("")
    with pytest.raises(SchemaError):
        loads_records(HEADER + "\n")
    with pytest.raises(SchemaError):
        loads_records("trial_id,group\n0,0\n")


def test_mixed_scenarios_rejected():
    text = (HEADER + "\n0,0,lane_change,2,2,0,0,lower,500,0,FV,\n"
            "1,0,car_follow,2,2,0,0,lower,500,0,FV,\n")
    with pytest.raises(SchemaError):
        loads_records(text)


segments = st.lists(st.integers(0, 20000), min_size=1, max_size=8)


@given(segments)
def test_fixation_encoding_round_trip(durs):
    fx = tuple((FV if i % 2 == 0 else RV, d) for i, d in enumerate(durs))
    assert decode_fixations(encode_fixations(fx), LC) == fx


@given(st.integers(0, 10**6), st.integers(0, 50), st.integers(1, 3), st.integers(1, 3),
       st.sampled_from(list(Choice)), st.integers(1, 10**5), st.integers(0, 30))
def test_record_csv_round_trip(tid, g, z1, z2, choice, rt, ns):
    r = TrialRecord(tid, g, LC, z1, z2, choice, rt, ns, RV, None)
    (back,), _ = loads_records(dumps_records([r]))
    assert back == r
