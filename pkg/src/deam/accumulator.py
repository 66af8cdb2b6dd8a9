"""Single-trial evidence accumulation with collapsing bounds.

Trials advance together in time chunks of growing size. Each trial owns its
random stream and draws its noise chunk by chunk, so a trial gives the same
result whether it is simulated alone or inside a batch.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from deam.attention import (
    FixationSchedule,
    FixationTarget,
    InvalidSchedule,
    scenario_targets,
    theta,
)
from deam.core import ModelParams, SignConvention, TrialCondition

FIRST_CHUNK_STEPS = 256
MAX_CHUNK_STEPS = 4096
MAX_BLOCK_TRIALS = 2048


class Choice(str, enum.Enum):
    UPPER = "upper"
    LOWER = "lower"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class TraceSample:
    t: float
    V: float
    attended: FixationTarget
    bound: float


@dataclass(frozen=True)
class TrialOutcome:
    choice: Choice
    rt: float
    n_switches: int
    last_fixation: FixationTarget
    # realized (target, duration) segments, the last one cut at rt
    fixations: tuple[tuple[FixationTarget, float], ...]
    trace: tuple[TraceSample, ...] | None = field(default=None, compare=False)

    @property
    def timed_out(self) -> bool:
        return self.choice is Choice.TIMEOUT

    @property
    def switch_times(self) -> tuple[float, ...]:
        out, t = [], 0.0
        for _, dur in self.fixations[:-1]:
            t += dur
            out.append(t)
        return tuple(out)


@dataclass(frozen=True)
class MomentarySample:
    attended_evidence: float
    unattended_evidence: float
    t: float = 0.0


def bound_upper(t, r: float, B_start: float):
    """Collapsing upper bound B_start * exp(-r t); accepts scalars or arrays."""
    out = B_start * np.exp(-r * np.asarray(t, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def bound_lower(t, r: float, B_start: float):
    return -bound_upper(t, r, B_start)


def drift_terms(condition: TrialCondition, th: float, d: float,
                convention: SignConvention = SignConvention.ADDM_STANDARD
                ) -> tuple[float, float]:
    """Deterministic increment when attending the option-1 / option-2 item."""
    z1, z2 = condition.z1, condition.z2
    attend_one = d * (z1 - th * z2)
    if SignConvention(convention) is SignConvention.ADDM_STANDARD:
        attend_two = d * (th * z1 - z2)
    else:
        attend_two = d * (z2 - th * z1)
    return attend_one, attend_two


def rdv_step(V: float, condition: TrialCondition, attended: FixationTarget, theta: float,
             d: float, noise: float,
             convention: SignConvention = SignConvention.ADDM_STANDARD) -> float:
    one, two = scenario_targets(condition.scenario)
    attended = FixationTarget(attended)
    if attended not in (one, two):
        raise InvalidSchedule(f"{attended.value} is not a {condition.scenario.value} target")
    attend_one, attend_two = drift_terms(condition, theta, d, convention)
    return V + ((attend_one if attended is one else attend_two) + noise)


def _realized(schedule: FixationSchedule, rt: float):
    segs, start = [], 0.0
    for (target, dur), end in zip(schedule.segments, schedule.ends):
        if start >= rt:
            break
        segs.append((target, min(end, rt) - start))
        start = end
    return tuple(segs)


def simulate_many(conditions: Sequence[TrialCondition], params: ModelParams,
                  schedules: Sequence[FixationSchedule],
                  rngs: Sequence[np.random.Generator],
                  record_trace: bool = False) -> list[TrialOutcome]:
    """Simulate independent trials, each driven by its own schedule and stream."""
    n = len(conditions)
    if not (len(schedules) == len(rngs) == n):
        raise ValueError("conditions, schedules and rngs must have equal length")
    outcomes: list[TrialOutcome] = []
    for lo in range(0, n, MAX_BLOCK_TRIALS):
        hi = min(n, lo + MAX_BLOCK_TRIALS)
        outcomes.extend(_simulate_block(conditions[lo:hi], params, schedules[lo:hi],
                                        rngs[lo:hi], record_trace))
    return outcomes


def _chunk_sizes(n_steps: int):
    size, k0 = FIRST_CHUNK_STEPS, 0
    while k0 < n_steps:
        yield k0, size
        k0 += size
        size = min(2 * size, MAX_CHUNK_STEPS)


def switch_steps(ends: Sequence[float], dt: float) -> np.ndarray:
    """Integration step at which each switch takes effect (first k with k*dt >= end)."""
    e = np.asarray(ends, dtype=float)
    k = np.ceil(e / dt)
    k = np.where((k - 1) * dt >= e, k - 1, k)
    k = np.where(k * dt < e, k + 1, k)
    return np.maximum(k, 1).astype(np.int64)


@numba.njit(cache=True, nogil=True)
def _advance(V, par, ptr, sw_end, sw_step, d1, d2, sigma, Z, C, k0, bu, record, V_out, A_out):
    """Integrate each row of one time chunk, stopping a row at its first crossing.

    Returns the 0-based crossing offset per row (-1 if none) and whether the
    crossing was at the upper bound. V, par and ptr are updated in place to
    the state after the last integrated step.
    """
    n = V.shape[0]
    crossed = np.full(n, -1, dtype=np.int64)
    upper = np.zeros(n, dtype=np.bool_)
    for j in range(n):
        v = V[j]
        p = par[j]
        q = ptr[j]
        for c in range(C):
            k = k0 + c + 1
            while q < sw_end[j] and sw_step[q] <= k:
                p = 1 - p
                q += 1
            drift = d1[j] if p == 0 else d2[j]
            v = v + (drift + sigma * Z[j, c])
            if record:
                V_out[j, c] = v
                A_out[j, c] = p
            if v >= bu[c]:
                crossed[j] = c
                upper[j] = True
                break
            if v <= -bu[c]:
                crossed[j] = c
                break
        V[j] = v
        par[j] = p
        ptr[j] = q
    return crossed, upper


def _simulate_block(conditions, params, schedules, rngs, record_trace):
    n = len(conditions)
    n_steps = params.n_steps
    d1 = np.empty(n)
    d2 = np.empty(n)
    parity = np.zeros(n, dtype=np.int64)
    steps = []
    for i, (c, sched) in enumerate(zip(conditions, schedules)):
        if sched.scenario is not c.scenario:
            raise InvalidSchedule("schedule scenario does not match condition")
        if sched.total < params.t_max and not math.isclose(sched.total, params.t_max):
            raise InvalidSchedule(
                f"schedule covers {sched.total:.6g} s but t_max is {params.t_max:.6g} s")
        th = theta(c.clarity, params.m, params.n)
        d1[i], d2[i] = drift_terms(c, th, params.d, params.sign_convention)
        # parity 0 <=> attending the option-1 item
        parity[i] = 0 if sched.segments[0][0] is scenario_targets(c.scenario)[0] else 1
        steps.append(switch_steps(sched.switch_times, params.dt))
    sw_step = np.concatenate(steps) if steps else np.zeros(0, dtype=np.int64)
    sw_end_all = np.cumsum([s.size for s in steps]).astype(np.int64)
    ptr = sw_end_all - np.array([s.size for s in steps], dtype=np.int64)

    V = np.zeros(n)
    crossed_step = np.full(n, -1, dtype=np.int64)
    crossed_upper = np.zeros(n, dtype=bool)
    last_one = np.zeros(n, dtype=bool)
    alive = np.arange(n)
    traces = [[] for _ in range(n)] if record_trace else None
    dummy = np.zeros((1, 1))
    dummy_a = np.zeros((1, 1), dtype=np.int64)

    for k0, size in _chunk_sizes(n_steps):
        if not alive.size:
            break
        C = min(size, n_steps - k0)
        t = np.arange(k0 + 1, k0 + C + 1) * params.dt
        bu = params.B_start * np.exp(-params.r * t)
        Z = np.empty((alive.size, size))
        for j, i in enumerate(alive):
            Z[j] = rngs[i].standard_normal(size)
        V_a, par_a, ptr_a = V[alive], parity[alive], ptr[alive]
        if record_trace:
            V_out = np.zeros((alive.size, C))
            A_out = np.zeros((alive.size, C), dtype=np.int64)
        else:
            V_out, A_out = dummy, dummy_a
        crossed, upper = _advance(V_a, par_a, ptr_a, sw_end_all[alive], sw_step, d1[alive],
                                  d2[alive], float(params.sigma), Z, C, k0, bu,
                                  record_trace, V_out, A_out)
        V[alive], parity[alive], ptr[alive] = V_a, par_a, ptr_a
        if record_trace:
            for j, i in enumerate(alive):
                stop = crossed[j] + 1 if crossed[j] >= 0 else C
                traces[i].append((t[:stop], V_out[j, :stop], A_out[j, :stop] == 0, bu[:stop]))
        done = crossed >= 0
        idx_done = alive[done]
        crossed_step[idx_done] = k0 + crossed[done] + 1
        crossed_upper[idx_done] = upper[done]
        alive = alive[~done]
    last_one[:] = parity == 0

    outcomes = []
    for i, (c, sched) in enumerate(zip(conditions, schedules)):
        one, two = scenario_targets(c.scenario)
        if crossed_step[i] > 0:
            rt = float(crossed_step[i] * params.dt)
            choice = Choice.UPPER if crossed_upper[i] else Choice.LOWER
        else:
            rt = float(params.t_max)
            choice = Choice.TIMEOUT
        trace = None
        if record_trace:
            trace = tuple(
                TraceSample(float(tt), float(vv), one if a else two, float(bb))
                for tt_, vv_, aa_, bb_ in traces[i]
                for tt, vv, a, bb in zip(tt_, vv_, aa_, bb_))
        outcomes.append(TrialOutcome(
            choice=choice,
            rt=rt,
            n_switches=sched.switches_before(rt),
            last_fixation=one if last_one[i] else two,
            fixations=_realized(sched, rt),
            trace=trace,
        ))
    return outcomes


def simulate_trial(condition: TrialCondition, params: ModelParams,
                   schedule: FixationSchedule, rng: np.random.Generator,
                   record_trace: bool = False) -> TrialOutcome:
    """Integrate V from 0 until it reaches a bound or t_max elapses.

    At step k (t = k*dt) the attended item is the schedule's target at t, V
    gains the attention-weighted drift plus N(0, sigma^2) noise, and the trial
    stops at the first step with V >= B(t) or V <= -B(t).
    """
    return simulate_many([condition], params, [schedule], [rng], record_trace)[0]


def sample_momentary_evidence(condition: TrialCondition, attended: FixationTarget,
                              theta: float, sigma_z: float, z_bar: float, dt: float,
                              rng: np.random.Generator, t: float = 0.0) -> MomentarySample:
    """One per-step evidence draw from the attended and unattended items."""
    za, zu = rng.standard_normal(2)
    return MomentarySample(float((z_bar + sigma_z * za) * dt),
                           float(theta * (z_bar + sigma_z * zu) * dt), t)


def momentary_samples(n: int, theta: float, sigma_z: float, z_bar: float, dt: float,
                      rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized equivalent of n successive sample_momentary_evidence calls."""
    z = rng.standard_normal((n, 2))
    return (z_bar + sigma_z * z[:, 0]) * dt, theta * (z_bar + sigma_z * z[:, 1]) * dt
