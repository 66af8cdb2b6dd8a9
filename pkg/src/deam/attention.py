"""Attentional discount and open-loop fixation schedules."""

from __future__ import annotations

import bisect
import enum
import math
from dataclasses import dataclass
from itertools import accumulate

import numpy as np

from deam.core import DeamError, InvalidParams, ScenarioKind


class InvalidConfig(DeamError, ValueError):
    pass


class InvalidSchedule(DeamError, ValueError):
    pass


class OutOfRange(DeamError, ValueError):
    pass


class FixationTarget(str, enum.Enum):
    RV = "RV"
    FV = "FV"
    NON_FV = "NonFV"


# (option-1 item, option-2 item); option 1 drives V toward the upper bound
_TARGETS = {
    ScenarioKind.LANE_CHANGE: (FixationTarget.RV, FixationTarget.FV),
    ScenarioKind.CAR_FOLLOW: (FixationTarget.FV, FixationTarget.NON_FV),
}


def scenario_targets(scenario: ScenarioKind) -> tuple[FixationTarget, FixationTarget]:
    return _TARGETS[ScenarioKind(scenario)]


def option_one(scenario: ScenarioKind) -> FixationTarget:
    return _TARGETS[ScenarioKind(scenario)][0]


def other_target(scenario: ScenarioKind, target: FixationTarget) -> FixationTarget:
    a, b = scenario_targets(scenario)
    if target is a:
        return b
    if target is b:
        return a
    raise InvalidSchedule(f"{target.value} is not a {ScenarioKind(scenario).value} target")


def theta(clarity: int, m: float, n: float) -> float:
    """Attentional discount 1 / (m * clarity + n), in (0, 1]."""
    if m < 0:
        raise InvalidParams("m", f"must be >= 0, got {m}")
    if n < 1:
        raise InvalidParams("n", f"must be >= 1, got {n}")
    if clarity < 0:
        raise InvalidParams("clarity", f"must be >= 0, got {clarity}")
    return 1.0 / (m * clarity + n)


@dataclass(frozen=True)
class FixationSchedule:
    scenario: ScenarioKind
    segments: tuple[tuple[FixationTarget, float], ...]

    def __post_init__(self):
        allowed = scenario_targets(self.scenario)
        segs = tuple((FixationTarget(t), float(dur)) for t, dur in self.segments)
        if not segs:
            raise InvalidSchedule("schedule has no segments")
        prev = None
        for target, dur in segs:
            if target not in allowed:
                raise InvalidSchedule(
                    f"{target.value} is not a {self.scenario.value} target")
            if not dur > 0 or not math.isfinite(dur):
                raise InvalidSchedule(f"segment duration must be > 0, got {dur}")
            if target is prev:
                raise InvalidSchedule("consecutive segments must switch target")
            prev = target
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "_ends", tuple(accumulate(d for _, d in segs)))

    @property
    def ends(self) -> tuple[float, ...]:
        """Cumulative end time of each segment; all but the last are switch times."""
        return self._ends

    @property
    def total(self) -> float:
        return self._ends[-1]

    @property
    def switch_times(self) -> tuple[float, ...]:
        return self._ends[:-1]

    def index_at(self, t: float) -> int:
        return bisect.bisect_right(self._ends, t)

    def switches_before(self, t: float) -> int:
        return bisect.bisect_left(self.switch_times, t)

    @classmethod
    def single(cls, scenario: ScenarioKind, target: FixationTarget, duration: float):
        return cls(scenario, ((target, duration),))

    @classmethod
    def alternating(cls, scenario: ScenarioKind, first: FixationTarget,
                    durations) -> "FixationSchedule":
        segs, target = [], FixationTarget(first)
        for dur in durations:
            segs.append((target, dur))
            target = other_target(scenario, target)
        return cls(scenario, tuple(segs))


def fixation_at(schedule: FixationSchedule, t: float) -> FixationTarget:
    """Target fixated at time t; a boundary belongs to the later segment."""
    if not 0 <= t < schedule.total:
        raise OutOfRange(f"t={t} outside [0, {schedule.total})")
    return schedule.segments[schedule.index_at(t)][0]


@dataclass(frozen=True)
class FixationConfig:
    """Fixation-duration model.

    The first fixation is a normal draw truncated below at ``min_duration``;
    later fixations are log-normal around ``later_duration_log_median``,
    floored at ``min_duration``.
    """

    first_target: FixationTarget
    first_duration_mean: float = 1.0
    first_duration_sd: float = 0.1
    later_duration_log_median: float = 0.5
    later_duration_log_sd: float = 0.4
    min_duration: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "first_target", FixationTarget(self.first_target))
        for name in ("first_duration_mean", "later_duration_log_median", "min_duration"):
            if not getattr(self, name) > 0:
                raise InvalidConfig(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("first_duration_sd", "later_duration_log_sd"):
            if not getattr(self, name) >= 0:
                raise InvalidConfig(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.first_duration_sd == 0 and self.first_duration_mean < self.min_duration:
            raise InvalidConfig("first_duration_mean below min_duration with zero sd")

    def later_mean(self) -> float:
        """Mean of the (unfloored) log-normal later-fixation duration."""
        return self.later_duration_log_median * math.exp(self.later_duration_log_sd ** 2 / 2)

    def to_dict(self) -> dict:
        return {
            "first_target": self.first_target.value,
            "first_duration_mean": self.first_duration_mean,
            "first_duration_sd": self.first_duration_sd,
            "later_duration_log_median": self.later_duration_log_median,
            "later_duration_log_sd": self.later_duration_log_sd,
            "min_duration": self.min_duration,
        }


def default_fixation_config(scenario: ScenarioKind) -> FixationConfig:
    if ScenarioKind(scenario) is ScenarioKind.LANE_CHANGE:
        return FixationConfig(FixationTarget.FV, later_duration_log_median=0.5)
    return FixationConfig(FixationTarget.NON_FV, later_duration_log_median=0.7)


_MAX_REJECTIONS = 1000


def _first_duration(config: FixationConfig, rng: np.random.Generator) -> float:
    if config.first_duration_sd == 0:
        return float(config.first_duration_mean)
    for _ in range(_MAX_REJECTIONS):
        x = config.first_duration_mean + config.first_duration_sd * rng.standard_normal()
        if x >= config.min_duration:
            return float(x)
    return float(config.min_duration)


def generate_schedule(scenario: ScenarioKind, config: FixationConfig, t_max: float,
                      rng: np.random.Generator) -> FixationSchedule:
    """Draw an alternating schedule whose total duration exceeds t_max."""
    scenario = ScenarioKind(scenario)
    if config.first_target not in scenario_targets(scenario):
        raise InvalidConfig(
            f"first_target {config.first_target.value} invalid for {scenario.value}")
    if not t_max > 0:
        raise InvalidConfig(f"t_max must be > 0, got {t_max}")
    durations = [_first_duration(config, rng)]
    total = durations[0]
    log_median = math.log(config.later_duration_log_median)
    while total <= t_max:
        x = math.exp(log_median + config.later_duration_log_sd * rng.standard_normal())
        x = max(x, config.min_duration)
        durations.append(x)
        total += x
    return FixationSchedule.alternating(scenario, config.first_target, durations)
