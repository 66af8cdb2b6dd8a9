"""Scenario, perceptual-state and parameter types shared by every module."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, replace


class DeamError(Exception):
    """Base class for all errors raised by this package."""


class InvalidState(DeamError, ValueError):
    pass


class InvalidParams(DeamError, ValueError):
    """A model parameter violates its domain. ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ConfigError(DeamError, ValueError):
    pass


class ScenarioKind(str, enum.Enum):
    LANE_CHANGE = "lane_change"
    CAR_FOLLOW = "car_follow"

    @property
    def choice_labels(self) -> tuple[str, str]:
        """(upper-bound decision, lower-bound decision)."""
        if self is ScenarioKind.LANE_CHANGE:
            return ("lane-changing", "lane-keeping")
        return ("decelerating", "keep-driving")


class SignConvention(str, enum.Enum):
    # attending an option's item pushes V toward that option's bound
    ADDM_STANDARD = "addm"
    # second-item update exactly as printed: d * (z2 - theta * z1)
    PAPER_LITERAL = "paper"


STATES = (1, 2, 3)
CAR_FOLLOW_NON_FV_STATE = 2


@dataclass(frozen=True)
class EvidenceAffordance:
    bias: int
    clarity: int


@dataclass(frozen=True)
class TrialCondition:
    scenario: ScenarioKind
    z1: int
    z2: int

    def __post_init__(self):
        for name in ("z1", "z2"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v not in STATES:
                raise InvalidState(f"{name}={v!r} is not one of {STATES}")
        if self.scenario is ScenarioKind.CAR_FOLLOW and self.z2 != CAR_FOLLOW_NON_FV_STATE:
            raise InvalidState(
                f"car-following requires z2={CAR_FOLLOW_NON_FV_STATE}, got {self.z2}")

    @property
    def bias(self) -> int:
        return self.z1 - self.z2

    @property
    def clarity(self) -> int:
        return abs(self.z1 - self.z2)

    @property
    def affordance(self) -> EvidenceAffordance:
        return EvidenceAffordance(self.bias, self.clarity)


def make_condition(scenario: ScenarioKind | str, z1: int, z2: int) -> TrialCondition:
    """Validated condition; raises InvalidState outside the declared domain."""
    try:
        scenario = ScenarioKind(scenario)
    except ValueError as exc:
        raise InvalidState(f"unknown scenario {scenario!r}") from exc
    return TrialCondition(scenario, z1, z2)


def evidence_bias(c: TrialCondition) -> int:
    return c.z1 - c.z2


def evidence_clarity(c: TrialCondition) -> int:
    return abs(c.z1 - c.z2)


def all_conditions(scenario: ScenarioKind) -> list[TrialCondition]:
    if scenario is ScenarioKind.LANE_CHANGE:
        return [TrialCondition(scenario, a, b) for a in STATES for b in STATES]
    return [TrialCondition(scenario, a, CAR_FOLLOW_NON_FV_STATE) for a in STATES]


def bias_levels(scenario: ScenarioKind) -> list[int]:
    return sorted({c.bias for c in all_conditions(scenario)})


def clarity_levels(scenario: ScenarioKind) -> list[int]:
    return sorted({c.clarity for c in all_conditions(scenario)})


FREE_PARAMS = ("d", "m", "n", "r", "B_start", "sigma")


@dataclass(frozen=True)
class ModelParams:
    """The six free parameters plus simulation controls.

    ``sigma`` is the per-step noise standard deviation (no dt scaling), so
    results depend on ``dt``. Setting ``m=0`` and ``r=0`` gives the classic
    aDDM with a constant discount ``1/n`` and fixed bounds.
    """

    d: float
    m: float
    n: float
    r: float
    B_start: float
    sigma: float
    dt: float = 0.001
    t_max: float = 10.0
    sign_convention: SignConvention = SignConvention.ADDM_STANDARD

    def __post_init__(self):
        object.__setattr__(self, "sign_convention", SignConvention(self.sign_convention))
        for name in FREE_PARAMS + ("dt", "t_max"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise InvalidParams(name, f"must be a finite number, got {v!r}")
        if self.m < 0:
            raise InvalidParams("m", f"must be >= 0, got {self.m}")
        if self.n < 1:
            raise InvalidParams("n", f"must be >= 1, got {self.n}")
        if self.r < 0:
            raise InvalidParams("r", f"must be >= 0, got {self.r}")
        if self.B_start <= 0:
            raise InvalidParams("B_start", f"must be > 0, got {self.B_start}")
        if self.sigma < 0:
            raise InvalidParams("sigma", f"must be >= 0, got {self.sigma}")
        if self.dt <= 0:
            raise InvalidParams("dt", f"must be > 0, got {self.dt}")
        if self.t_max < self.dt:
            raise InvalidParams("t_max", f"must be >= dt, got {self.t_max}")

    @property
    def n_steps(self) -> int:
        """Number of integration steps before timeout."""
        ratio = self.t_max / self.dt
        k = round(ratio)
        return k if abs(ratio - k) < 1e-9 * max(1.0, ratio) else math.floor(ratio)

    def free(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in FREE_PARAMS}

    def with_free(self, **values) -> "ModelParams":
        return replace(self, **values)

    def as_addm(self) -> "ModelParams":
        """Constant discount and fixed bounds."""
        return replace(self, m=0.0, r=0.0)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["sign_convention"] = self.sign_convention.value
        return out


LANE_CHANGE_PARAMS = ModelParams(d=0.003, m=0.18, n=1.25, r=0.35, B_start=2.8, sigma=0.03)
CAR_FOLLOW_PARAMS = ModelParams(d=0.0008, m=0.1, n=1.5, r=0.15, B_start=1.5, sigma=0.01)


def published_params(scenario: ScenarioKind) -> ModelParams:
    if ScenarioKind(scenario) is ScenarioKind.LANE_CHANGE:
        return LANE_CHANGE_PARAMS
    return CAR_FOLLOW_PARAMS
