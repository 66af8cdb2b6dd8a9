"""Run configuration: a TOML file with one table per module.

Every table and key is optional; missing values fall back to the published
defaults for the chosen scenario. Unknown tables or keys raise ConfigError so
a typo never silently changes a run. Example::

    [run]
    scenario = "lane_change"
    seed = 42

    [model]
    d = 0.003
    sign_convention = "addm"

    [fixation]
    later_duration_log_median = 0.5

    [batch]
    n_groups = 8
    reps = 20

    [analysis]
    bin_width = 0.1
    smooth_window = 5

    [fit]
    population = 64
    eval_seed = 7
    metric = "z"
    weights = { choice = 1.0, rt = 1.0, switches = 1.0, rt_bias = 1.0, rt_sd = 1.0 }

    [fit.space]
    sigma = [0.03, 0.03]
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from deam.attention import (
    FixationConfig,
    InvalidConfig,
    default_fixation_config,
    scenario_targets,
)
from deam.core import (
    FREE_PARAMS,
    ConfigError,
    InvalidParams,
    ModelParams,
    ScenarioKind,
    SignConvention,
    published_params,
)
from deam.experiment import DEFAULT_DESIGN, InvalidDesign, TrialBatch, build_batch
from deam.fitting import (
    DEFAULT_SPACE,
    DEFAULT_WEIGHTS,
    METRICS,
    GAConfig,
    InvalidSpace,
    SearchSpace,
)

CONVENTION_ALIASES = {"addm": SignConvention.ADDM_STANDARD, "paper": SignConvention.PAPER_LITERAL}

_MODEL_KEYS = FREE_PARAMS + ("dt", "t_max", "sign_convention")
_FIX_KEYS = tuple(f.name for f in dataclasses.fields(FixationConfig))
_GA_KEYS = tuple(f.name for f in dataclasses.fields(GAConfig))
_SECTIONS = {
    "run": ("scenario", "seed"),
    "model": _MODEL_KEYS,
    "fixation": _FIX_KEYS,
    "batch": ("n_groups", "reps", "total"),
    "analysis": ("bin_width", "smooth_window", "conditional"),
    "fit": _GA_KEYS + ("eval_seed", "weights", "metric", "n_fresh", "space"),
}


@dataclass(frozen=True)
class BatchDesign:
    n_groups: int
    reps: int | None = None
    total: int | None = None

    def build(self, scenario: ScenarioKind) -> TrialBatch:
        return build_batch(scenario, self.n_groups, self.reps, total=self.total)


@dataclass(frozen=True)
class AnalysisOptions:
    bin_width: float = 0.1
    smooth_window: int = 5
    conditional: bool = True

    def __post_init__(self):
        if not self.bin_width > 0:
            raise ConfigError(f"analysis.bin_width: must be > 0, got {self.bin_width}")
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise ConfigError(f"analysis.smooth_window: must be a positive odd integer, "
                              f"got {self.smooth_window}")


@dataclass(frozen=True)
class FitOptions:
    ga: GAConfig = field(default_factory=GAConfig)
    space: SearchSpace = DEFAULT_SPACE
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    eval_seed: int | None = None
    n_fresh: int = 5
    metric: str = "mse"


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioKind
    seed: int
    model: ModelParams
    fixation: FixationConfig
    batch: BatchDesign
    analysis: AnalysisOptions = AnalysisOptions()
    fit: FitOptions = field(default_factory=FitOptions)

    def to_dict(self) -> dict:
        return {
            "run": {"scenario": self.scenario.value, "seed": self.seed},
            "model": self.model.to_dict(),
            "fixation": self.fixation.to_dict(),
            "batch": {k: v for k, v in dataclasses.asdict(self.batch).items() if v is not None},
            "analysis": dataclasses.asdict(self.analysis),
            "fit": {
                **dataclasses.asdict(self.fit.ga),
                "eval_seed": self.eval_seed,
                "n_fresh": self.fit.n_fresh,
                "weights": dict(sorted(self.fit.weights.items())),
                "metric": self.fit.metric,
                "space": self.fit.space.to_dict(),
            },
        }

    @property
    def eval_seed(self) -> int:
        return self.seed if self.fit.eval_seed is None else self.fit.eval_seed


def default_config(scenario: ScenarioKind | str = ScenarioKind.LANE_CHANGE,
                   seed: int = 0) -> RunConfig:
    scenario = ScenarioKind(scenario)
    return RunConfig(scenario, seed, published_params(scenario),
                     default_fixation_config(scenario), BatchDesign(**DEFAULT_DESIGN[scenario]))


def _check_keys(table: dict, allowed, where: str):
    if not isinstance(table, dict):
        raise ConfigError(f"{where}: expected a table")
    for k in table:
        if k not in allowed:
            raise ConfigError(f"{where}.{k}: unknown key")


def _int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return value


def _scenario(value) -> ScenarioKind:
    try:
        return ScenarioKind(value)
    except ValueError:
        raise ConfigError(f"run.scenario: unknown scenario {value!r}; "
                          f"expected one of {[s.value for s in ScenarioKind]}") from None


def parse_convention(value) -> SignConvention:
    if value in CONVENTION_ALIASES:
        return CONVENTION_ALIASES[value]
    try:
        return SignConvention(value)
    except ValueError:
        raise ConfigError(f"model.sign_convention: expected 'addm' or 'paper', "
                          f"got {value!r}") from None


def config_from_dict(data: dict, scenario: ScenarioKind | str | None = None,
                     seed: int | None = None, convention: str | None = None) -> RunConfig:
    """Build a validated RunConfig; keyword overrides win over the file."""
    _check_keys(data, _SECTIONS, "config")
    for name, keys in _SECTIONS.items():
        if name in data:
            _check_keys(data[name], keys, name)
    run = data.get("run", {})
    sc = _scenario(scenario if scenario is not None else run.get("scenario", "lane_change"))
    base = default_config(sc)
    master = _int(seed if seed is not None else run.get("seed", 0), "run.seed")
    if master < 0:
        raise ConfigError("run.seed: must be >= 0")

    model_kw = dict(data.get("model", {}))
    if convention is not None:
        model_kw["sign_convention"] = convention
    if "sign_convention" in model_kw:
        model_kw["sign_convention"] = parse_convention(model_kw["sign_convention"])
    try:
        model = replace(base.model, **model_kw)
    except InvalidParams as exc:
        raise ConfigError(f"model.{exc}") from exc

    try:
        fixation = replace(base.fixation, **data.get("fixation", {}))
    except (InvalidConfig, ValueError) as exc:
        raise ConfigError(f"fixation: {exc}") from exc
    if fixation.first_target not in scenario_targets(sc):
        raise ConfigError(f"fixation.first_target: {fixation.first_target.value} is not a "
                          f"{sc.value} target")

    design = dict(dataclasses.asdict(base.batch))
    bt = data.get("batch", {})
    if bt:
        design = {"n_groups": design["n_groups"], "reps": None, "total": None, **bt}
        if sc is ScenarioKind.LANE_CHANGE and design["reps"] is None:
            design["reps"] = DEFAULT_DESIGN[sc]["reps"]
        if sc is ScenarioKind.CAR_FOLLOW and design["reps"] is None and design["total"] is None:
            design["total"] = DEFAULT_DESIGN[sc]["total"]
    for k, v in design.items():
        if v is not None:
            _int(v, f"batch.{k}")
    batch = BatchDesign(**design)
    try:
        batch.build(sc)
    except InvalidDesign as exc:
        raise ConfigError(f"batch: {exc}") from exc

    an = data.get("analysis", {})
    if "smooth_window" in an:
        _int(an["smooth_window"], "analysis.smooth_window")
    if not isinstance(an.get("conditional", True), bool):
        raise ConfigError("analysis.conditional: expected true or false")
    analysis = AnalysisOptions(**an)

    fit = _fit_options(data.get("fit", {}))
    return RunConfig(sc, master, model, fixation, batch, analysis, fit)


def _fit_options(ft: dict) -> FitOptions:
    ga_kw = {k: v for k, v in ft.items() if k in _GA_KEYS}
    for k in ("population", "generations", "tournament_k", "elitism", "seed"):
        if k in ga_kw:
            _int(ga_kw[k], f"fit.{k}")
    try:
        ga = GAConfig(**ga_kw)
    except InvalidSpace as exc:
        raise ConfigError(f"fit: {exc}") from exc
    bounds = DEFAULT_SPACE.to_dict()
    sp = ft.get("space", {})
    _check_keys(sp, FREE_PARAMS, "fit.space")
    for k, v in sp.items():
        if not (isinstance(v, list) and len(v) == 2):
            raise ConfigError(f"fit.space.{k}: expected [lower, upper]")
        bounds[k] = v
    try:
        space = SearchSpace(bounds)
    except InvalidSpace as exc:
        raise ConfigError(f"fit.space: {exc}") from exc
    weights = dict(DEFAULT_WEIGHTS)
    w = ft.get("weights", {})
    _check_keys(w, DEFAULT_WEIGHTS, "fit.weights")
    for k, v in w.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0:
            raise ConfigError(f"fit.weights.{k}: must be a number >= 0")
        weights[k] = float(v)
    eval_seed = ft.get("eval_seed")
    if eval_seed is not None:
        _int(eval_seed, "fit.eval_seed")
    n_fresh = _int(ft.get("n_fresh", 5), "fit.n_fresh")
    metric = ft.get("metric", "mse")
    if metric not in METRICS:
        raise ConfigError(f"fit.metric: expected one of {list(METRICS)}, got {metric!r}")
    if not any(weights.values()):
        raise ConfigError("fit.weights: at least one weight must be > 0")
    return FitOptions(ga, space, weights, eval_seed, n_fresh, metric)


def load_config(path: str | Path | None, **overrides) -> RunConfig:
    if path is None:
        return config_from_dict({}, **overrides)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, **overrides)
