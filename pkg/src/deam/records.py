"""Trial-record interchange rows and their CSV encoding.

Simulated and human trials share this schema; summaries are always computed
from records so both flow through the same aggregation path.

Columns, in order::

    trial_id, group, scenario, z1, z2, bias, clarity, choice, rt_ms,
    n_switches, last_fixation, fixations

``fixations`` is optional (empty cell) and encodes the realized fixation
sequence as ``target:duration_ms;target:duration_ms;...``. Lines starting
with ``#`` before the header carry provenance (config hash, seed) and are
preserved on round-trip.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from deam.accumulator import Choice, TrialOutcome
from deam.attention import FixationTarget, option_one, scenario_targets
from deam.core import DeamError, InvalidState, ScenarioKind, TrialCondition

COLUMNS = ("trial_id", "group", "scenario", "z1", "z2", "bias", "clarity", "choice",
           "rt_ms", "n_switches", "last_fixation", "fixations")


class SchemaError(DeamError, ValueError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    group: int
    scenario: ScenarioKind
    z1: int
    z2: int
    choice: Choice
    rt_ms: int
    n_switches: int
    last_fixation: FixationTarget
    fixations: tuple[tuple[FixationTarget, int], ...] | None = None

    @property
    def condition(self) -> TrialCondition:
        return TrialCondition(self.scenario, self.z1, self.z2)

    @property
    def bias(self) -> int:
        return self.z1 - self.z2

    @property
    def clarity(self) -> int:
        return abs(self.z1 - self.z2)

    @property
    def rt(self) -> float:
        return self.rt_ms / 1000.0

    @property
    def decided(self) -> bool:
        return self.choice is not Choice.TIMEOUT

    @property
    def upper(self) -> bool:
        return self.choice is Choice.UPPER

    @property
    def last_on_option_one(self) -> bool:
        return self.last_fixation is option_one(self.scenario)

    def switch_times_ms(self) -> list[int] | None:
        if self.fixations is None:
            return None
        out, t = [], 0
        for _, dur in self.fixations[:-1]:
            t += dur
            out.append(t)
        return out


def _ms(x: float) -> int:
    return int(round(x * 1000.0))


def record_from_outcome(trial_id: int, group: int, condition: TrialCondition,
                        outcome: TrialOutcome) -> TrialRecord:
    # durations from differences of rounded boundaries keep switch times exact in ms
    t, prev = 0.0, 0
    fixations = []
    for target, dur in outcome.fixations:
        t += dur
        end = _ms(t)
        fixations.append((target, end - prev))
        prev = end
    return TrialRecord(
        trial_id=trial_id,
        group=group,
        scenario=condition.scenario,
        z1=condition.z1,
        z2=condition.z2,
        choice=outcome.choice,
        rt_ms=_ms(outcome.rt),
        n_switches=outcome.n_switches,
        last_fixation=outcome.last_fixation,
        fixations=tuple(fixations),
    )


def encode_fixations(fixations) -> str:
    if fixations is None:
        return ""
    return ";".join(f"{t.value}:{d}" for t, d in fixations)


def decode_fixations(text: str, scenario: ScenarioKind):
    text = text.strip()
    if not text:
        return None
    allowed = scenario_targets(scenario)
    out = []
    for part in text.split(";"):
        target, sep, dur = part.partition(":")
        if not sep:
            raise ValueError(f"bad fixation segment {part!r}")
        target = FixationTarget(target)
        if target not in allowed:
            raise ValueError(f"{target.value} is not a {scenario.value} target")
        dur = int(dur)
        if dur < 0:
            raise ValueError(f"negative fixation duration {dur}")
        out.append((target, dur))
    return tuple(out)


def _row(rec: TrialRecord) -> list[str]:
    return [str(rec.trial_id), str(rec.group), rec.scenario.value, str(rec.z1), str(rec.z2),
            str(rec.bias), str(rec.clarity), rec.choice.value, str(rec.rt_ms),
            str(rec.n_switches), rec.last_fixation.value, encode_fixations(rec.fixations)]


def dumps_records(records: Iterable[TrialRecord], header_comments: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    for line in header_comments:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for rec in records:
        writer.writerow(_row(rec))
    return buf.getvalue()


def write_records(path: str | Path, records: Iterable[TrialRecord],
                  header_comments: Sequence[str] = ()) -> None:
    Path(path).write_text(dumps_records(records, header_comments), encoding="utf-8")


def _parse_row(row: dict, line: int) -> TrialRecord:
    try:
        scenario = ScenarioKind(row["scenario"])
        z1, z2 = int(row["z1"]), int(row["z2"])
        TrialCondition(scenario, z1, z2)
        if int(row["bias"]) != z1 - z2 or int(row["clarity"]) != abs(z1 - z2):
            raise SchemaError("bias/clarity inconsistent with z1/z2", line)
        rt_ms = int(row["rt_ms"])
        if rt_ms <= 0:
            raise SchemaError(f"rt_ms must be > 0, got {rt_ms}", line)
        n_switches = int(row["n_switches"])
        if n_switches < 0:
            raise SchemaError("n_switches must be >= 0", line)
        last = FixationTarget(row["last_fixation"])
        if last not in scenario_targets(scenario):
            raise SchemaError(f"last_fixation {last.value} invalid for {scenario.value}", line)
        return TrialRecord(
            trial_id=int(row["trial_id"]),
            group=int(row["group"]),
            scenario=scenario,
            z1=z1,
            z2=z2,
            choice=Choice(row["choice"]),
            rt_ms=rt_ms,
            n_switches=n_switches,
            last_fixation=last,
            fixations=decode_fixations(row.get("fixations") or "", scenario),
        )
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError, InvalidState) as exc:
        raise SchemaError(str(exc), line) from exc


def loads_records(text: str) -> tuple[list[TrialRecord], list[str]]:
    """Parse CSV text into records plus the leading ``#`` comment lines."""
    lines = text.splitlines()
    comments = []
    while lines and lines[0].startswith("#"):
        comments.append(lines.pop(0)[1:].strip())
    if not lines:
        raise SchemaError("no header row")
    reader = csv.DictReader(lines)
    missing = [c for c in COLUMNS if c != "fixations" and c not in (reader.fieldnames or [])]
    if missing:
        raise SchemaError(f"missing columns: {', '.join(missing)}", 1)
    records = [_parse_row(row, i) for i, row in enumerate(reader, start=1)]
    if not records:
        raise SchemaError("no trial rows")
    scenarios = {r.scenario for r in records}
    if len(scenarios) > 1:
        raise SchemaError("mixed scenarios in one file")
    return records, comments


def read_records(path: str | Path) -> tuple[list[TrialRecord], list[str]]:
    return loads_records(Path(path).read_text(encoding="utf-8"))
