"""Trial batches, batch execution and summary curves."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from deam.accumulator import TrialOutcome, simulate_many
from deam.attention import FixationConfig, generate_schedule
from deam.core import (
    DeamError,
    ModelParams,
    ScenarioKind,
    TrialCondition,
    all_conditions,
)
from deam.records import TrialRecord, record_from_outcome

SMALL_N = 5


class InvalidDesign(DeamError, ValueError):
    pass


class EmptyCell(DeamError, LookupError):
    pass


def trial_rng(master_seed: int, trial_id: int, stream: int = 0) -> np.random.Generator:
    """Per-trial random stream.

    The stream is PCG64 seeded by SeedSequence((master_seed, stream, trial_id)),
    a hash-based mixing of the counter words, so every trial gets the same
    numbers no matter how trials are ordered or split across threads.
    """
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([int(master_seed), int(stream), int(trial_id)])))


@dataclass(frozen=True)
class TrialBatch:
    scenario: ScenarioKind
    groups: tuple[tuple[tuple[TrialCondition, int], ...], ...]

    @property
    def n_trials(self) -> int:
        return sum(len(g) for g in self.groups)

    def trials(self) -> Iterable[tuple[int, TrialCondition, int]]:
        """(group, condition, trial_id) in trial-id order."""
        for g, trials in enumerate(self.groups):
            for cond, tid in trials:
                yield g, cond, tid

    def group_sizes(self) -> list[int]:
        return [len(g) for g in self.groups]


DEFAULT_DESIGN = {
    ScenarioKind.LANE_CHANGE: {"n_groups": 8, "reps": 20, "total": None},
    ScenarioKind.CAR_FOLLOW: {"n_groups": 6, "reps": None, "total": 2320},
}


def build_batch(scenario: ScenarioKind, n_groups: int, reps: int | None = None,
                rng: np.random.Generator | None = None, total: int | None = None) -> TrialBatch:
    """Enumerate the simulation design.

    Lane change: each group holds every (z1, z2) pair ``reps`` times.
    Car following: trials cycle z1 over 1..3 and are dealt round-robin to
    groups until ``total`` trials exist (default ``3 * n_groups * reps``).
    An ``rng``, if given, shuffles trial order within each group.
    """
    scenario = ScenarioKind(scenario)
    if n_groups < 1:
        raise InvalidDesign(f"n_groups must be >= 1, got {n_groups}")
    conds = all_conditions(scenario)
    groups: list[list[TrialCondition]] = [[] for _ in range(n_groups)]
    if scenario is ScenarioKind.LANE_CHANGE:
        if reps is None or reps < 1:
            raise InvalidDesign(f"reps must be >= 1, got {reps}")
        for g in groups:
            for c in conds:
                g.extend([c] * reps)
    else:
        if total is None:
            if reps is None or reps < 1:
                raise InvalidDesign(f"reps must be >= 1, got {reps}")
            total = len(conds) * n_groups * reps
        if total < 1:
            raise InvalidDesign(f"total must be >= 1, got {total}")
        for i in range(total):
            groups[i % n_groups].append(conds[(i // n_groups) % len(conds)])
    if rng is not None:
        for g in groups:
            order = rng.permutation(len(g))
            g[:] = [g[k] for k in order]
    out, tid = [], 0
    for g in groups:
        out.append(tuple((c, tid + k) for k, c in enumerate(g)))
        tid += len(g)
    return TrialBatch(scenario, tuple(out))


def default_batch(scenario: ScenarioKind) -> TrialBatch:
    return build_batch(scenario, **DEFAULT_DESIGN[ScenarioKind(scenario)])


@dataclass(frozen=True)
class TrialResult:
    trial_id: int
    group: int
    condition: TrialCondition
    outcome: TrialOutcome

    def to_record(self) -> TrialRecord:
        return record_from_outcome(self.trial_id, self.group, self.condition, self.outcome)


@dataclass(frozen=True)
class PreparedBatch:
    """A batch with its fixation schedules drawn and per-trial stream states saved.

    Schedules depend only on the fixation config, t_max and seed, so repeated
    runs at different model parameters (as in fitting) can skip redrawing them.
    """

    items: tuple[tuple[int, TrialCondition, int], ...]
    schedules: tuple
    states: tuple
    t_max: float

    def streams(self) -> list[np.random.Generator]:
        out = []
        for st in self.states:
            bg = np.random.PCG64()
            bg.state = st
            out.append(np.random.Generator(bg))
        return out


def prepare_batch(batch: TrialBatch, fix_config: FixationConfig, t_max: float,
                  master_seed: int) -> PreparedBatch:
    items = tuple(sorted(batch.trials(), key=lambda x: x[2]))
    schedules, states = [], []
    for g, cond, tid in items:
        rng = trial_rng(master_seed, tid)
        schedules.append(generate_schedule(cond.scenario, fix_config, t_max, rng))
        states.append(rng.bit_generator.state)
    return PreparedBatch(items, tuple(schedules), tuple(states), t_max)


def _run_slice(prepared: PreparedBatch, lo: int, hi: int, params: ModelParams):
    items = prepared.items[lo:hi]
    rngs = PreparedBatch(items, (), prepared.states[lo:hi], prepared.t_max).streams()
    outs = simulate_many([c for _, c, _ in items], params, prepared.schedules[lo:hi], rngs)
    return [TrialResult(tid, g, cond, o) for (g, cond, tid), o in zip(items, outs)]


def run_prepared(prepared: PreparedBatch, params: ModelParams,
                 threads: int = 1) -> list[TrialResult]:
    if params.t_max > prepared.t_max:
        raise InvalidDesign("prepared schedules are shorter than params.t_max")
    n = len(prepared.items)
    if threads <= 1 or n < 2:
        return _run_slice(prepared, 0, n, params)
    size = math.ceil(n / threads)
    bounds = [(lo, min(n, lo + size)) for lo in range(0, n, size)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = pool.map(lambda b: _run_slice(prepared, b[0], b[1], params), bounds)
    return [r for part in parts for r in part]


def run_batch(batch: TrialBatch, params: ModelParams, fix_config: FixationConfig,
              master_seed: int, threads: int = 1) -> list[TrialResult]:
    """Simulate every trial; output is in trial-id order whatever ``threads`` is."""
    return run_prepared(prepare_batch(batch, fix_config, params.t_max, master_seed), params,
                        threads)


def to_records(results: Sequence[TrialResult]) -> list[TrialRecord]:
    return [r.to_record() for r in results]


# ---------------------------------------------------------------- aggregation

@dataclass(frozen=True)
class Cell:
    value: float
    n: int

    @property
    def small(self) -> bool:
        return self.n < SMALL_N


def _mean(values) -> float:
    # fsum is correctly rounded, so cell means do not depend on record order
    return math.fsum(values) / len(values)


def _mean_cells(keyed: dict) -> dict:
    return {k: Cell(_mean(v), len(v)) for k, v in sorted(keyed.items())}


def _by_group(records, key, value, split_by_choice=False):
    acc = defaultdict(lambda: defaultdict(list))
    for r in records:
        if not r.decided:
            continue
        g = r.group if not split_by_choice else (r.group, r.choice.value)
        acc[g][key(r)].append(value(r))
    if not split_by_choice:
        return {g: _mean_cells(acc[g]) for g in sorted(acc)}
    out: dict = {}
    for (g, ch) in sorted(acc):
        out.setdefault(g, {})[ch] = _mean_cells(acc[(g, ch)])
    return out


def choice_prob_by_bias(records: Sequence[TrialRecord]) -> dict[int, dict[int, Cell]]:
    """Per group: bias -> P(upper) over decided trials. Empty cells are absent."""
    return _by_group(records, lambda r: r.bias, lambda r: 1.0 if r.upper else 0.0)


def rt_by_clarity(records: Sequence[TrialRecord], split_by_choice: bool = False) -> dict:
    """Per group (and optionally per choice): clarity -> mean RT in seconds."""
    return _by_group(records, lambda r: r.clarity, lambda r: r.rt, split_by_choice)


def rt_by_bias(records: Sequence[TrialRecord]) -> dict:
    """Per group: bias -> mean RT in seconds."""
    return _by_group(records, lambda r: r.bias, lambda r: r.rt)


def rt_sd_by_clarity(records: Sequence[TrialRecord]) -> dict:
    """Per group: clarity -> population standard deviation of RT in seconds."""
    def sd(values):
        m = _mean(values)
        return math.sqrt(math.fsum((v - m) ** 2 for v in values) / len(values))

    raw = _by_group(records, lambda r: r.clarity, lambda r: r.rt)
    acc = defaultdict(lambda: defaultdict(list))
    for r in records:
        if r.decided:
            acc[r.group][r.clarity].append(r.rt)
    return {g: {c: Cell(sd(acc[g][c]), cell.n) for c, cell in m.items()} for g, m in raw.items()}


def switches_by_clarity(records: Sequence[TrialRecord], split_by_choice: bool = False) -> dict:
    return _by_group(records, lambda r: r.clarity, lambda r: float(r.n_switches),
                     split_by_choice)


@dataclass(frozen=True)
class LastFixationCell:
    p_one: float | None
    n_one: int
    p_two: float | None
    n_two: int


def last_fixation_curves(records: Sequence[TrialRecord]) -> dict[int, LastFixationCell]:
    """bias -> P(upper | last fixation on option-1 item), P(upper | option-2 item)."""
    acc = defaultdict(lambda: ([], []))
    for r in records:
        if r.decided:
            acc[r.bias][0 if r.last_on_option_one else 1].append(1.0 if r.upper else 0.0)
    out = {}
    for b in sorted(acc):
        one, two = acc[b]
        out[b] = LastFixationCell(_mean(one) if one else None, len(one),
                                  _mean(two) if two else None, len(two))
    return out


def _smooth(values: list[float | None], window: int) -> list[float | None]:
    half = window // 2
    out = []
    for i, v in enumerate(values):
        if v is None:
            out.append(None)
            continue
        near = [x for x in values[max(0, i - half): i + half + 1] if x is not None]
        out.append(float(np.mean(near)))
    return out


def switching_timeseries(records: Sequence[TrialRecord], bin_width: float = 0.1,
                         smooth_window: int = 5, conditional: bool = True,
                         t_end: float | None = None) -> dict[str, list[tuple[float, float]]]:
    """Smoothed per-bin switching probability, per clarity level and pooled ("all").

    In each bin the numerator counts trials with at least one switch inside
    the bin before their RT. The denominator is trials still undecided at
    the bin start (``conditional``) or all trials. Bins with an empty
    denominator are dropped; smoothing is a centered moving average over
    ``smooth_window`` bins that skips dropped bins.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    if smooth_window < 1 or smooth_window % 2 == 0:
        raise ValueError("smooth_window must be a positive odd integer")
    width = int(round(bin_width * 1000))
    usable = [r for r in records if r.fixations is not None]
    if not usable:
        return {}
    end_ms = int(round(t_end * 1000)) if t_end is not None else max(r.rt_ms for r in usable)
    n_bins = max(1, math.ceil(end_ms / width))
    keyed: dict[str, list[TrialRecord]] = defaultdict(list)
    for r in usable:
        keyed["all"].append(r)
        keyed[str(r.clarity)].append(r)
    out = {}
    for key in sorted(keyed, key=lambda k: (k != "all", k)):
        rs = keyed[key]
        num = np.zeros(n_bins)
        den = np.zeros(n_bins)
        for r in rs:
            alive_bins = n_bins if not conditional else min(n_bins, math.ceil(r.rt_ms / width))
            den[:alive_bins] += 1
            hit = {s // width for s in r.switch_times_ms() if s < r.rt_ms and s // width < n_bins}
            for b in hit:
                num[b] += 1
        raw = [float(num[b] / den[b]) if den[b] > 0 else None for b in range(n_bins)]
        smooth = _smooth(raw, smooth_window)
        out[key] = [(b * width / 1000.0, p) for b, p in enumerate(smooth) if p is not None]
    return out


def first_peak(series: Sequence[tuple[float, float]], rel_height: float = 0.5) -> float | None:
    """Start time of the first local maximum reaching rel_height * global max."""
    if not series:
        return None
    ys = [p for _, p in series]
    top = max(ys)
    if top <= 0:
        return None
    for i, (t, y) in enumerate(series):
        left = ys[i - 1] if i > 0 else -math.inf
        right = ys[i + 1] if i + 1 < len(ys) else -math.inf
        if y >= rel_height * top and y >= left and y >= right:
            return t
    return None


@dataclass
class SummaryCurves:
    scenario: ScenarioKind
    choice_prob_by_bias: dict
    rt_by_clarity: dict
    rt_by_clarity_choice: dict
    rt_sd_by_clarity: dict
    rt_by_bias: dict
    switches_by_clarity: dict
    switches_by_clarity_choice: dict
    switching_timeseries: dict
    last_fixation_curves: dict
    timeout_rate: float
    n_trials: int
    n_decided: int
    group_sizes: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def cells(m):
            return {str(k): {"value": c.value, "n": c.n, "small_n": c.small}
                    for k, c in m.items()}

        def split(m):
            return {str(g): {ch: cells(v) for ch, v in chs.items()} for g, chs in m.items()}

        return {
            "scenario": self.scenario.value,
            "n_trials": self.n_trials,
            "n_decided": self.n_decided,
            "timeout_rate": self.timeout_rate,
            "group_sizes": {str(k): v for k, v in self.group_sizes.items()},
            "choice_prob_by_bias": {str(g): cells(m) for g, m in self.choice_prob_by_bias.items()},
            "rt_by_clarity": {str(g): cells(m) for g, m in self.rt_by_clarity.items()},
            "rt_by_clarity_choice": split(self.rt_by_clarity_choice),
            "rt_sd_by_clarity": {str(g): cells(m) for g, m in self.rt_sd_by_clarity.items()},
            "rt_by_bias": {str(g): cells(m) for g, m in self.rt_by_bias.items()},
            "switches_by_clarity": {str(g): cells(m) for g, m in self.switches_by_clarity.items()},
            "switches_by_clarity_choice": split(self.switches_by_clarity_choice),
            "switching_timeseries": {k: [[t, p] for t, p in v]
                                     for k, v in self.switching_timeseries.items()},
            "last_fixation_curves": {
                str(b): {"p_one": c.p_one, "n_one": c.n_one, "p_two": c.p_two, "n_two": c.n_two}
                for b, c in self.last_fixation_curves.items()},
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "SummaryCurves":
        def cells(m):
            return {int(k): Cell(float(v["value"]), int(v["n"])) for k, v in m.items()}

        def split(m):
            return {int(g): {ch: cells(v) for ch, v in chs.items()} for g, chs in m.items()}

        return cls(
            scenario=ScenarioKind(data["scenario"]),
            choice_prob_by_bias={int(g): cells(m) for g, m in data["choice_prob_by_bias"].items()},
            rt_by_clarity={int(g): cells(m) for g, m in data["rt_by_clarity"].items()},
            rt_by_clarity_choice=split(data.get("rt_by_clarity_choice", {})),
            rt_sd_by_clarity={int(g): cells(m)
                              for g, m in data.get("rt_sd_by_clarity", {}).items()},
            rt_by_bias={int(g): cells(m) for g, m in data.get("rt_by_bias", {}).items()},
            switches_by_clarity={int(g): cells(m)
                                 for g, m in data["switches_by_clarity"].items()},
            switches_by_clarity_choice=split(data.get("switches_by_clarity_choice", {})),
            switching_timeseries={k: [(float(t), float(p)) for t, p in v]
                                  for k, v in data.get("switching_timeseries", {}).items()},
            last_fixation_curves={
                int(b): LastFixationCell(c["p_one"], int(c["n_one"]), c["p_two"], int(c["n_two"]))
                for b, c in data.get("last_fixation_curves", {}).items()},
            timeout_rate=float(data["timeout_rate"]),
            n_trials=int(data["n_trials"]),
            n_decided=int(data["n_decided"]),
            group_sizes={int(k): int(v) for k, v in data.get("group_sizes", {}).items()},
            warnings=list(data.get("warnings", [])),
        )


def _empty_cell_warnings(name, per_group, levels):
    out = []
    for g, m in per_group.items():
        for lvl in levels:
            if lvl not in m:
                out.append(f"{name}: group {g} level {lvl} has no decided trials")
    return out


def summarize(records: Sequence[TrialRecord], bin_width: float = 0.1, smooth_window: int = 5,
              conditional: bool = True) -> SummaryCurves:
    """All summary curves for one scenario's records (simulated or human)."""
    from deam.core import bias_levels, clarity_levels

    if not records:
        raise EmptyCell("no records to summarize")
    scenario = records[0].scenario
    decided = [r for r in records if r.decided]
    group_sizes: dict[int, int] = defaultdict(int)
    for r in records:
        group_sizes[r.group] += 1
    curves = SummaryCurves(
        scenario=scenario,
        choice_prob_by_bias=choice_prob_by_bias(records),
        rt_by_clarity=rt_by_clarity(records),
        rt_by_clarity_choice=rt_by_clarity(records, split_by_choice=True),
        rt_sd_by_clarity=rt_sd_by_clarity(records),
        rt_by_bias=rt_by_bias(records),
        switches_by_clarity=switches_by_clarity(records),
        switches_by_clarity_choice=switches_by_clarity(records, split_by_choice=True),
        switching_timeseries=switching_timeseries(records, bin_width, smooth_window, conditional),
        last_fixation_curves=last_fixation_curves(records),
        timeout_rate=1.0 - len(decided) / len(records),
        n_trials=len(records),
        n_decided=len(decided),
        group_sizes=dict(sorted(group_sizes.items())),
    )
    curves.warnings += _empty_cell_warnings("choice_prob_by_bias", curves.choice_prob_by_bias,
                                            bias_levels(scenario))
    curves.warnings += _empty_cell_warnings("rt_by_clarity", curves.rt_by_clarity,
                                            clarity_levels(scenario))
    n_small = sum(c.small for m in curves.choice_prob_by_bias.values() for c in m.values())
    if n_small:
        curves.warnings.append(f"{n_small} choice cells have fewer than {SMALL_N} trials")
    return curves


def group_mean(per_group: dict[int, dict[int, Cell]]) -> dict[int, float]:
    """Average a per-group curve across groups, level by level."""
    acc = defaultdict(list)
    for m in per_group.values():
        for lvl, c in m.items():
            acc[lvl].append(c.value)
    return {lvl: float(np.mean(v)) for lvl, v in sorted(acc.items())}


def curve_xy(per_group: dict[int, dict[int, Cell]]) -> list[tuple[list[float], list[float]]]:
    """(levels, values) per group, for slope tests."""
    return [([float(k) for k in m], [c.value for c in m.values()])
            for _, m in sorted(per_group.items())]


def series_mean(series: Sequence[tuple[float, float]], t0: float = 0.0, t1: float = math.inf
                ) -> float | None:
    vals = [p for t, p in series if t0 <= t < t1]
    return float(np.mean(vals)) if vals else None
