import csv
import json
import subprocess
import sys

import pytest
from scipy import stats as sps

from deam.cli import main, sidecar_path
from deam.config import default_config, load_config
from deam.core import ConfigError, ScenarioKind, SignConvention
from deam.records import dumps_records, read_records


def run(*argv):
    return main([str(a) for a in argv])


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    out = d / "trials.csv"
    assert run("simulate", "--out", out, "--seed", 42) == 0
    curves = d / "curves.json"
    assert run("summarize", out, "--out", curves) == 0
    return out, curves


def test_simulate_default_lane_change(simulated):
    out, _ = simulated
    records, comments = read_records(out)
    assert len(records) == 1440
    assert any(c.startswith("config_hash=") for c in comments) and "seed=42" in comments
    side = json.loads(sidecar_path(out).read_text())
    assert side["seed"] == 42 and side["n_trials"] == 1440
    assert side["config"]["model"]["d"] == 0.003 and "version" in side
    assert 0 <= side["timeout_rate"] < 0.05
    assert side["config_hash"] in "".join(comments)


def test_simulate_repeat_and_threads_byte_identical(tmp_path, simulated):
    out, _ = simulated
    again = tmp_path / "again.csv"
    assert run("simulate", "--out", again, "--seed", 42, "--threads", 3) == 0
    assert again.read_bytes() == out.read_bytes()
    assert sidecar_path(again).read_bytes() == sidecar_path(out).read_bytes()


def test_round_trip_reserialize(simulated):
    out, _ = simulated
    records, comments = read_records(out)
    assert dumps_records(records, comments).encode() == out.read_bytes()


def test_car_follow_simulate(tmp_path):
    out = tmp_path / "cf.csv"
    assert run("simulate", "--scenario", "car_follow", "--out", out) == 0
    records, _ = read_records(out)
    assert len(records) == 2320
    side = json.loads(sidecar_path(out).read_text())
    assert sorted(side["group_sizes"]) == [386, 386, 387, 387, 387, 387]


def test_config_negative_m_names_field(tmp_path, capsys):
    cfg = write(tmp_path / "c.toml", "[model]\nm = -1.0\n")
    assert run("simulate", "--config", cfg, "--out", tmp_path / "x.csv") == 2
    assert "model.m" in capsys.readouterr().err
    with pytest.raises(ConfigError, match="model.m"):
        load_config(cfg)


@pytest.mark.parametrize("text,name", [
    ("[model]\nsgima = 0.1\n", "model.sgima"),
    ("[modle]\nd = 0.1\n", "config.modle"),
    ("[fit.space]\nq = [0, 1]\n", "fit.space.q"),
    ("[fit]\nweights = { choise = 1.0 }\n", "fit.weights.choise"),
    ("[fit]\nmetric = \"chi2\"\n", "fit.metric"),
    ("[fit]\nweights = { choice = 0, rt = 0, switches = 0 }\n", "fit.weights"),
    ("[batch]\nreps = 0\n", "batch"),
    ("[analysis]\nsmooth_window = 4\n", "analysis.smooth_window"),
    ("[fixation]\nfirst_target = \"NonFV\"\n", "fixation.first_target"),
    ("[run]\nscenario = \"highway\"\n", "run.scenario"),
    ("[model\n", "c.toml"),
])
def test_config_errors(tmp_path, text, name):
    cfg = write(tmp_path / "c.toml", text)
    with pytest.raises(ConfigError, match=name.replace(".", r"\.")):
        load_config(cfg)


def test_missing_config_file_exit_2(tmp_path):
    assert run("simulate", "--config", tmp_path / "nope.toml", "--out", tmp_path / "o.csv") == 2


def test_overrides_and_convention(tmp_path):
    cfg = write(tmp_path / "c.toml",
                "[run]\nscenario = \"car_follow\"\nseed = 3\n[model]\nsign_convention = \"paper\"\n")
    c = load_config(cfg)
    assert c.scenario is ScenarioKind.CAR_FOLLOW and c.seed == 3
    assert c.model.sign_convention is SignConvention.PAPER_LITERAL
    assert c.model.d == 0.0008
    o = load_config(cfg, seed=9, convention="addm")
    assert o.seed == 9 and o.model.sign_convention is SignConvention.ADDM_STANDARD
    assert default_config().to_dict() == load_config(None).to_dict()


def test_summarize_structure(simulated):
    _, curves = simulated
    data = json.loads(curves.read_text())
    cp = data["choice_prob_by_bias"]
    assert len(cp) == 8 and all(len(m) == 5 for m in cp.values())
    assert all("n" in c and "small_n" in c for m in cp.values() for c in m.values())
    assert data["provenance"]["seed"] == 42 and len(data["provenance"]["config_hash"]) == 16


def test_summarize_empty_input(tmp_path):
    assert run("summarize", write(tmp_path / "e.csv", ""), "--out", tmp_path / "c.json") == 2


def test_summarize_bad_row_exit_2(tmp_path, capsys):
    text = ("trial_id,group,scenario,z1,z2,bias,clarity,choice,rt_ms,n_switches,last_fixation,"
            "fixations\n0,0,lane_change,3,1,2,2,upper,-5,1,RV,\n")
    assert run("summarize", write(tmp_path / "b.csv", text), "--out", tmp_path / "c.json") == 2
    assert "row 1" in capsys.readouterr().err


HUMAN = """trial_id,group,scenario,z1,z2,bias,clarity,choice,rt_ms,n_switches,last_fixation,fixations
0,0,lane_change,3,1,2,2,upper,1200,1,RV,FV:1000;RV:200
1,0,lane_change,1,3,-2,2,lower,900,0,FV,FV:900
2,0,lane_change,2,2,0,0,upper,2100,2,RV,FV:1000;RV:600;FV:500
3,1,lane_change,2,1,1,1,upper,1500,1,RV,
4,1,lane_change,1,2,-1,1,lower,1400,1,RV,
5,1,lane_change,2,2,0,0,lower,2500,3,FV,
6,0,lane_change,3,2,1,1,upper,1100,1,RV,FV:1000;RV:100
7,1,lane_change,2,3,-1,1,lower,1000,0,FV,
8,0,lane_change,3,3,0,0,upper,1900,2,RV,
9,1,lane_change,1,1,0,0,lower,2000,2,FV,
"""


def test_human_fixture_small_n(tmp_path):
    out = tmp_path / "h.json"
    assert run("summarize", write(tmp_path / "h.csv", HUMAN), "--out", out) == 0
    data = json.loads(out.read_text())
    assert data["n_trials"] == 10
    assert any(c["small_n"] for m in data["choice_prob_by_bias"].values() for c in m.values())
    assert data["warnings"]
    model = json.loads((tmp_path / "h.json").read_text())
    assert set(model) >= {"choice_prob_by_bias", "rt_by_clarity", "switches_by_clarity",
                          "switching_timeseries", "last_fixation_curves", "timeout_rate"}


def test_stats_default_run(simulated, tmp_path):
    _, curves = simulated
    out = tmp_path / "s.json"
    assert run("stats", curves, "--reference", curves, "--out", out) == 0
    rep = json.loads(out.read_text())
    ch = rep["slope_tests"]["choice_prob_by_bias"]
    assert ch["t"] > 0 and ch["p_two_tailed"] < 0.01 and ch["df"] == 7
    assert all(v == 0.0 for v in rep["mse_vs_reference"].values())
    assert rep["provenance"]["seed"] == 42


def test_stats_constant_curves_warn(tmp_path, capsys):
    flat = "\n".join(HUMAN.splitlines()[:1] + [
        f"{i},{i % 2},lane_change,{z1},{z2},{z1 - z2},{abs(z1 - z2)},upper,1000,1,RV,"
        for i, (z1, z2) in enumerate([(1, 1), (1, 2), (2, 1), (1, 3), (3, 1)] * 2)]) + "\n"
    curves = tmp_path / "flat.json"
    assert run("summarize", write(tmp_path / "flat.csv", flat), "--out", curves) == 0
    out = tmp_path / "s.json"
    assert run("stats", curves, "--out", out) == 0
    rep = json.loads(out.read_text())
    assert "ZeroVariance" in rep["slope_tests"]["choice_prob_by_bias"]["warning"]
    assert "ZeroVariance" in capsys.readouterr().err


def test_stats_malformed_curves(tmp_path):
    assert run("stats", write(tmp_path / "bad.json", "{\"scenario\": 1}")) == 2
    assert run("stats", write(tmp_path / "bad2.json", "not json")) == 2


FIT_POINT = """[batch]
n_groups = 2
reps = 3
[fit]
population = 4
generations = 1
elitism = 1
n_fresh = 1
[fit.space]
d = [0.003, 0.003]
m = [0.18, 0.18]
n = [1.25, 1.25]
r = [0.35, 0.35]
B_start = [2.8, 2.8]
sigma = [0.03, 0.03]
"""


def test_fit_point_space_echoes(tmp_path, simulated):
    _, curves = simulated
    cfg = write(tmp_path / "fit.toml", FIT_POINT)
    out = tmp_path / "fit.json"
    assert run("fit", curves, "--config", cfg, "--out", out) == 0
    res = json.loads(out.read_text())
    assert {k: res["best_params"][k] for k in ("d", "m", "n", "r", "B_start", "sigma")} == \
        {"d": 0.003, "m": 0.18, "n": 1.25, "r": 0.35, "B_start": 2.8, "sigma": 0.03}
    prov = res["provenance"]
    assert prov["seed"] == 0 and prov["targets"]["seed"] == 42
    again = tmp_path / "fit2.json"
    assert run("fit", curves, "--config", cfg, "--out", again, "--threads", 2) == 0
    assert again.read_bytes() == out.read_bytes()


def test_fit_malformed_targets(tmp_path):
    cfg = write(tmp_path / "fit.toml", FIT_POINT)
    bad = write(tmp_path / "t.json", json.dumps({"scenario": "lane_change"}))
    assert run("fit", bad, "--config", cfg, "--out", tmp_path / "o.json") == 2


def test_fit_targets_lacking_weighted_curve(tmp_path, simulated, capsys):
    _, curves = simulated
    data = json.loads(curves.read_text())
    del data["rt_by_bias"]
    old = write(tmp_path / "old.json", json.dumps(data))
    on = write(tmp_path / "on.toml", FIT_POINT.replace(
        "n_fresh = 1\n", "n_fresh = 1\nmetric = \"z\"\nweights = { rt_bias = 1.0 }\n"))
    assert run("fit", old, "--config", on, "--out", tmp_path / "o.json") == 2
    assert "rt_bias" in capsys.readouterr().err
    cfg = write(tmp_path / "fit.toml", FIT_POINT)
    assert run("fit", old, "--config", cfg, "--out", tmp_path / "o.json") == 0


def test_fit_scenario_mismatch(tmp_path, simulated):
    _, curves = simulated
    assert run("fit", curves, "--scenario", "car_follow", "--out", tmp_path / "o.json") == 2


def _read_csv(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


def test_momentary(tmp_path):
    out = tmp_path / "m.csv"
    assert run("momentary", "--n", 0, "--seed", 1, "--out", out) == 0
    assert _read_csv(out) == [] and "index,attended_evidence" in out.read_text()
    assert run("momentary", "--n", 20000, "--theta", 1.0, "--seed", 4, "--out", out) == 0
    rows = _read_csv(out)
    a = [float(r["attended_evidence"]) for r in rows]
    u = [float(r["unattended_evidence"]) for r in rows]
    assert sps.ks_2samp(a, u).pvalue > 0.01
    assert run("momentary", "--n", -1, "--out", out) == 2


def test_trace_zero_noise_oracle(tmp_path):
    cfg = write(tmp_path / "c.toml", "[model]\nsigma = 0.0\n")
    out = tmp_path / "t.csv"
    assert run("trace", "--z1", 3, "--z2", 1, "--single", "RV", "--config", cfg, "--out", out) == 0
    rows = _read_csv(out)
    last = rows[-1]
    assert float(last["t"]) == pytest.approx(0.348, abs=1e-9)
    assert float(last["V"]) >= float(last["bound_upper"])
    for r in rows[:-1]:
        assert float(r["bound_lower"]) < float(r["V"]) < float(r["bound_upper"])
    assert all(r["target"] == "RV" for r in rows)


def test_trace_fixed_bound(tmp_path):
    cfg = write(tmp_path / "c.toml", "[model]\nr = 0.0\n")
    out = tmp_path / "t.csv"
    assert run("trace", "--z1", 2, "--z2", 2, "--config", cfg, "--seed", 5, "--out", out) == 0
    rows = _read_csv(out)
    assert {r["bound_upper"] for r in rows} == {repr(2.8)}
    assert {r["target"] for r in rows} <= {"FV", "RV"}


def test_trace_bad_condition(tmp_path):
    assert run("trace", "--z1", 1, "--z2", 3, "--scenario", "car_follow",
               "--out", tmp_path / "t.csv") == 2
    assert run("trace", "--z1", 2, "--z2", 2, "--single", "NonFV",
               "--out", tmp_path / "t.csv") == 2


def test_module_entry_point(tmp_path):
    out = tmp_path / "m.csv"
    proc = subprocess.run([sys.executable, "-m", "deam", "momentary", "--n", "3", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert len(_read_csv(out)) == 3
    proc = subprocess.run([sys.executable, "-m", "deam", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2
