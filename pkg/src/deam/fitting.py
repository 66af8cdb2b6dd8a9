"""Genetic-algorithm fitting of the six free parameters to summary curves."""

from __future__ import annotations

import hashlib
import json
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from deam.attention import FixationConfig, theta
from deam.core import FREE_PARAMS, DeamError, ModelParams, clarity_levels
from deam.experiment import (
    Cell,
    PreparedBatch,
    SummaryCurves,
    TrialBatch,
    choice_prob_by_bias,
    group_mean,
    prepare_batch,
    rt_by_bias,
    rt_by_clarity,
    rt_sd_by_clarity,
    run_prepared,
    switches_by_clarity,
    to_records,
)


class InvalidSpace(DeamError, ValueError):
    pass


@dataclass(frozen=True)
class SearchSpace:
    """Box bounds per free parameter. A gene with lower == upper is held fixed."""

    bounds: Mapping[str, tuple[float, float]]

    def __post_init__(self):
        b = {k: (float(lo), float(hi)) for k, (lo, hi) in dict(self.bounds).items()}
        missing = [k for k in FREE_PARAMS if k not in b]
        extra = [k for k in b if k not in FREE_PARAMS]
        if missing or extra:
            raise InvalidSpace(f"bounds must cover exactly {FREE_PARAMS}; "
                               f"missing={missing} extra={extra}")
        for k, (lo, hi) in b.items():
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise InvalidSpace(f"{k}: need finite lower <= upper, got [{lo}, {hi}]")
            if lo < 0:
                raise InvalidSpace(f"{k}: lower bound must be >= 0, got {lo}")
        if b["n"][0] < 1:
            raise InvalidSpace(f"n: lower bound must be >= 1, got {b['n'][0]}")
        if b["B_start"][0] <= 0:
            raise InvalidSpace("B_start: lower bound must be > 0")
        object.__setattr__(self, "bounds", {k: b[k] for k in FREE_PARAMS})

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.bounds[k][0] for k in FREE_PARAMS])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.bounds[k][1] for k in FREE_PARAMS])

    @classmethod
    def point(cls, params: ModelParams) -> "SearchSpace":
        return cls({k: (v, v) for k, v in params.free().items()})

    def pinned(self, **values: float) -> "SearchSpace":
        b = dict(self.bounds)
        for k, v in values.items():
            b[k] = (v, v)
        return SearchSpace(b)

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in self.bounds.items()}


DEFAULT_SPACE = SearchSpace({
    "d": (1e-4, 1e-2),
    "m": (0.0, 1.0),
    "n": (1.0, 3.0),
    "r": (0.0, 1.0),
    "B_start": (0.5, 5.0),
    "sigma": (1e-3, 0.1),
})


@dataclass(frozen=True)
class GAConfig:
    population: int = 64
    generations: int = 100
    tournament_k: int = 3
    crossover_rate: float = 0.7
    mutation_sd_fraction: float = 0.1
    # when set, the mutation sd shrinks geometrically from mutation_sd_fraction
    # to this fraction of the range by the last generation
    mutation_sd_final: float | None = None
    elitism: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.tournament_k < 2:
            raise InvalidSpace("tournament_k must be >= 2")
        if self.population < self.elitism + 2:
            raise InvalidSpace("population must be >= elitism + 2")
        if self.elitism < 0 or self.generations < 0:
            raise InvalidSpace("elitism and generations must be >= 0")
        if not 0 <= self.crossover_rate <= 1:
            raise InvalidSpace("crossover_rate must lie in [0, 1]")
        if not self.mutation_sd_fraction > 0:
            raise InvalidSpace("mutation_sd_fraction must be > 0")
        if self.mutation_sd_final is not None and not self.mutation_sd_final > 0:
            raise InvalidSpace("mutation_sd_final must be > 0")

    def mutation_sd(self, gen: int) -> float:
        """Mutation sd (fraction of the box span) used to breed generation ``gen``."""
        if self.mutation_sd_final is None or self.generations <= 1:
            return self.mutation_sd_fraction
        ratio = self.mutation_sd_final / self.mutation_sd_fraction
        return self.mutation_sd_fraction * ratio ** ((gen - 1) / (self.generations - 1))


DEFAULT_WEIGHTS = {"choice": 1.0, "rt": 1.0, "rt_bias": 0.0, "rt_sd": 0.0, "switches": 1.0}
# recovery scores every curve; RT by bias and RT spread are what separate the
# truth from the d / B_start / r ridge that the three mean curves leave open
RECOVERY_WEIGHTS = {"choice": 1.0, "rt": 1.0, "rt_bias": 1.0, "rt_sd": 1.0, "switches": 1.0}
METRICS = ("mse", "z")


def _scale(target: dict[int, dict[int, Cell]]) -> float:
    vals = [abs(v) for v in group_mean(target).values()]
    s = float(np.mean(vals)) if vals else 1.0
    return s if s > 0 else 1.0


def curve_mse(sim: dict[int, dict[int, Cell]], target: dict[int, dict[int, Cell]],
              scale: float = 1.0, missing_penalty: float = 1.0) -> float:
    """MSE between group-mean curves over the target's levels, divided by ``scale``.

    A target level the simulation cannot fill (every trial timed out) costs
    ``missing_penalty``.
    """
    sim_m = group_mean(sim)
    errs = [missing_penalty if lvl not in sim_m else ((sim_m[lvl] - v) / scale) ** 2
            for lvl, v in group_mean(target).items()]
    return float(np.mean(errs)) if errs else 0.0


def level_stats(per_group: dict[int, dict[int, Cell]]) -> dict[int, tuple[float, float]]:
    """level -> (mean across groups, squared standard error of that mean).

    The standard error comes from the spread of the group values; with a
    single group it is 0.
    """
    acc = defaultdict(list)
    for m in per_group.values():
        for lvl, c in m.items():
            acc[lvl].append(c.value)
    out = {}
    for lvl, v in sorted(acc.items()):
        se2 = float(np.var(v, ddof=1)) / len(v) if len(v) > 1 else 0.0
        out[lvl] = (float(np.mean(v)), se2)
    return out


def curve_distance(sim: dict[int, dict[int, Cell]], target: dict[int, dict[int, Cell]],
                   floor: float = 0.01, missing_penalty: float = 100.0) -> float:
    """Mean squared z-score between group-mean curves over the target's levels.

    Each level's difference is divided by the combined standard error of
    both means plus ``floor`` (in the curve's units); the floor keeps levels
    where every group agrees, such as saturated choice cells, finite. A
    target level the simulation cannot fill costs ``missing_penalty``.
    """
    sim_s = level_stats(sim)
    errs = []
    for lvl, (tm, tse2) in level_stats(target).items():
        if lvl not in sim_s:
            errs.append(missing_penalty)
            continue
        sm, sse2 = sim_s[lvl]
        errs.append((sm - tm) ** 2 / (tse2 + sse2 + floor ** 2))
    return float(np.mean(errs)) if errs else 0.0


def curves_for_objective(records) -> dict:
    return {
        "choice": choice_prob_by_bias(records),
        "rt": rt_by_clarity(records),
        "rt_bias": rt_by_bias(records),
        "rt_sd": rt_sd_by_clarity(records),
        "switches": switches_by_clarity(records),
    }


def targets_from_summary(curves: SummaryCurves) -> dict:
    return {"choice": curves.choice_prob_by_bias, "rt": curves.rt_by_clarity,
            "rt_bias": curves.rt_by_bias, "rt_sd": curves.rt_sd_by_clarity,
            "switches": curves.switches_by_clarity}


@dataclass
class Objective:
    """Weighted sum of per-curve discrepancies between simulated and target curves.

    Every evaluation reuses ``eval_seed`` (common random numbers), so the
    landscape is deterministic. With ``metric="mse"`` each curve contributes
    its MSE, RT-like and switch curves first divided by their mean target
    value. With ``metric="z"`` each contributes ``curve_distance``: squared
    differences in standard-error units, so precise statistics (mean RT at
    the extreme bias levels, say) count for more than noisy ones. There the
    floor is ``floor_fraction`` of the curve's mean magnitude (of 1 for
    choice probabilities). Weights missing from ``weights`` count as zero.
    """

    targets: dict
    batch: TrialBatch
    fix_config: FixationConfig
    base: ModelParams
    eval_seed: int
    weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    metric: str = "mse"
    floor_fraction: float = 0.01

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown objective metric {self.metric!r}; expected one of {METRICS}")
        unknown = set(self.weights) - set(DEFAULT_WEIGHTS)
        if unknown:
            raise ValueError(f"unknown objective weights: {sorted(unknown)}")
        missing = [k for k, w in self.weights.items() if w and not self.targets.get(k)]
        if missing:
            raise ValueError(f"targets lack curves with non-zero weight: {missing}")
        if not any(self.weights.values()):
            raise ValueError("at least one objective weight must be > 0")
        self.scales = {k: 1.0 if k == "choice" else _scale(self.targets.get(k) or {})
                       for k in DEFAULT_WEIGHTS}
        self._prepared: dict[int, PreparedBatch] = {}

    def prepared(self, seed: int) -> PreparedBatch:
        if seed not in self._prepared:
            pb = prepare_batch(self.batch, self.fix_config, self.base.t_max, seed)
            if seed != self.eval_seed:
                return pb
            self._prepared[seed] = pb
        return self._prepared[seed]

    def simulate(self, params: ModelParams, seed: int | None = None) -> dict:
        seed = self.eval_seed if seed is None else seed
        return curves_for_objective(to_records(run_prepared(self.prepared(seed), params)))

    def score(self, sim: dict) -> float:
        total = 0.0
        for key, w in self.weights.items():
            if not w:
                continue
            if self.metric == "mse":
                total += w * curve_mse(sim[key], self.targets[key], self.scales[key])
            else:
                total += w * curve_distance(sim[key], self.targets[key],
                                            self.floor_fraction * self.scales[key])
        return total

    def __call__(self, params: ModelParams, seed: int | None = None) -> float:
        return self.score(self.simulate(params, seed))

    def params_from_genes(self, genes: Sequence[float]) -> ModelParams:
        return self.base.with_free(**{k: float(v) for k, v in zip(FREE_PARAMS, genes)})


def make_targets(params: ModelParams, batch: TrialBatch, fix_config: FixationConfig,
                 seed: int) -> dict:
    pb = prepare_batch(batch, fix_config, params.t_max, seed)
    return curves_for_objective(to_records(run_prepared(pb, params)))


@dataclass(frozen=True)
class NoiseFloor:
    values: tuple[float, ...]

    @property
    def floor(self) -> float:
        """Largest objective the true parameters reached on a resampled seed."""
        return max(self.values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))


def calibrate_noise_floor(objective: Objective, true_params: ModelParams, n: int = 20,
                          seed_offset: int = 1_000_003) -> NoiseFloor:
    """Objective of the generating parameters on ``n`` resampled evaluation seeds."""
    return NoiseFloor(tuple(objective(true_params, seed=objective.eval_seed + seed_offset + i)
                            for i in range(n)))


@dataclass
class FitResult:
    best_params: ModelParams
    objective: float
    history: list[float]
    fresh_objectives: list[float]
    eval_seed: int
    ga: GAConfig
    space: SearchSpace
    n_evaluations: int = 0

    @property
    def fresh_objective(self) -> float:
        return float(np.mean(self.fresh_objectives)) if self.fresh_objectives else math.nan

    def theta_by_clarity(self, clarities: Sequence[int] = (0, 1, 2)) -> dict[int, float]:
        p = self.best_params
        return {c: theta(c, p.m, p.n) for c in clarities}

    def to_dict(self) -> dict:
        cfg = {"ga": asdict(self.ga), "space": self.space.to_dict(), "eval_seed": self.eval_seed}
        return {
            "best_params": self.best_params.to_dict(),
            "theta_by_clarity": {str(k): v for k, v in self.theta_by_clarity().items()},
            "objective": self.objective,
            "fresh_objective": self.fresh_objective,
            "fresh_objectives": list(self.fresh_objectives),
            "history": list(self.history),
            "n_evaluations": self.n_evaluations,
            "provenance": dict(cfg, config_hash=config_hash(cfg)),
        }


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _tournament(rng, fitness, k):
    idx = rng.choice(fitness.size, size=k, replace=False)
    return idx[np.argmin(fitness[idx])]


def fit_ga(objective: Objective, space: SearchSpace, ga: GAConfig = GAConfig(),
           threads: int = 1, n_fresh: int = 5, progress=None) -> FitResult:
    """Minimize ``objective`` over ``space``.

    Tournament selection, uniform crossover, Gaussian mutation of every gene
    with sd ``mutation_sd_fraction * (upper - lower)`` clamped to the box
    (decaying towards ``mutation_sd_final`` if that is set), and elitism. Returns the best individual seen; ``history`` holds the best
    objective after each generation (generation 0 is the initial population).
    """
    lo, hi = space.lower, space.upper
    span = hi - lo
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([ga.seed, 0x6A])))
    cache: dict[tuple, float] = {}

    def evaluate(pop: np.ndarray) -> np.ndarray:
        keys = [tuple(row.tolist()) for row in pop]
        todo = [k for k in dict.fromkeys(keys) if k not in cache]
        if threads > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                vals = list(pool.map(lambda k: objective(objective.params_from_genes(k)), todo))
        else:
            vals = [objective(objective.params_from_genes(k)) for k in todo]
        cache.update(zip(todo, vals))
        return np.array([cache[k] for k in keys])

    pop = lo + rng.random((ga.population, lo.size)) * span
    fit = evaluate(pop)
    best_i = int(np.argmin(fit))
    best_genes, best_fit = pop[best_i].copy(), float(fit[best_i])
    history = [best_fit]
    if progress:
        progress(0, best_fit)
    for gen in range(1, ga.generations + 1):
        sd = ga.mutation_sd(gen) * span
        order = np.argsort(fit, kind="stable")
        children = [pop[i].copy() for i in order[:ga.elitism]]
        while len(children) < ga.population:
            a = pop[_tournament(rng, fit, ga.tournament_k)]
            b = pop[_tournament(rng, fit, ga.tournament_k)]
            if rng.random() < ga.crossover_rate:
                mask = rng.random(lo.size) < 0.5
                child = np.where(mask, a, b)
            else:
                child = a.copy()
            child = np.clip(child + rng.standard_normal(lo.size) * sd, lo, hi)
            children.append(child)
        pop = np.array(children)
        fit = evaluate(pop)
        i = int(np.argmin(fit))
        if fit[i] < best_fit:
            best_genes, best_fit = pop[i].copy(), float(fit[i])
        history.append(best_fit)
        if progress:
            progress(gen, best_fit)

    best = objective.params_from_genes(best_genes)
    fresh_seeds = [objective.eval_seed + 7919 * (j + 1) for j in range(n_fresh)]
    fresh = [objective(best, seed=s) for s in fresh_seeds]
    return FitResult(best, best_fit, history, fresh, objective.eval_seed, ga, space,
                     n_evaluations=len(cache))


@dataclass(frozen=True)
class RecoveryReport:
    true_params: ModelParams
    fit: FitResult
    noise_floor: NoiseFloor
    theta_true: dict
    theta_fit: dict

    def rel_error(self, name: str) -> float:
        t = getattr(self.true_params, name)
        return abs(getattr(self.fit.best_params, name) - t) / abs(t)

    @property
    def theta_rel_errors(self) -> dict[int, float]:
        return {c: abs(self.theta_fit[c] - self.theta_true[c]) / self.theta_true[c]
                for c in self.theta_true}


def recover(true_params: ModelParams, batch: TrialBatch, fix_config: FixationConfig,
            space: SearchSpace, ga: GAConfig, target_seed: int, eval_seed: int,
            weights: Mapping[str, float] | None = None, metric: str = "z",
            n_floor: int = 20, threads: int = 1) -> RecoveryReport:
    """Fit targets simulated from known parameters and compare with the truth."""
    targets = make_targets(true_params, batch, fix_config, target_seed)
    obj = Objective(targets, batch, fix_config, true_params, eval_seed,
                    dict(weights or RECOVERY_WEIGHTS), metric)
    floor = calibrate_noise_floor(obj, true_params, n=n_floor)
    fit = fit_ga(obj, space, ga, threads=threads)
    levels = clarity_levels(batch.scenario)
    p = fit.best_params
    return RecoveryReport(
        true_params, fit, floor,
        {c: theta(c, true_params.m, true_params.n) for c in levels},
        {c: theta(c, p.m, p.n) for c in levels},
    )
