"""Counterfactual rollouts of the reject-all-L idle-server process.

From a decision instant, the counterfactual rejects every L arrival (including
the candidate being evaluated), admits every H arrival that finds an idle
server, and lets the jobs already in service finish at their realised
completion times.  H arrivals and H service requirements are read from the
shared sample path starting at the live cursors, so the rollout sees exactly
the future the live system would see.  L arrivals change nothing in the
counterfactual, so the rollout never reads the L streams.

PFI races the idle level to ``floor(sqrt(N))`` against 1; SSS only asks
whether the level stays above 1 for the next ``w`` hours.
"""
from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field
from typing import Optional

from .model import Decision, JobClass, ModelParams
from .samplepath import SamplePath, StreamId

__all__ = [
    "TransitionCapExceeded",
    "RaceVerdict",
    "RaceOutcome",
    "CounterfactualState",
    "counterfactual_from_state",
    "fresh_counterfactual",
    "race_to_levels",
    "window_race",
    "window_check",
    "default_max_transitions",
    "pfi_decide",
    "sss_decide",
]

_AH = int(StreamId.AH)
_SH = int(StreamId.SH)


class TransitionCapExceeded(RuntimeError):
    """A race ran past its transition budget without hitting either level."""


class RaceVerdict(enum.Enum):
    HIT_LOWER = "hit_lower"
    HIT_UPPER = "hit_upper"
    WINDOW_EXPIRED = "window_expired"


@dataclass(frozen=True)
class RaceOutcome:
    verdict: RaceVerdict
    hit_time: float  # hours after the start of the rollout
    transitions: int


@dataclass
class CounterfactualState:
    """Frozen copy of everything the rollout needs.

    ``completions`` is a heap of absolute completion times for the jobs in
    service; ``ah_index``/``sh_index`` point at the next unread H variates.
    ``probe``, when a list, receives ``(stream, index, realization_time)``
    for every variate the rollout reads.
    """

    params: ModelParams
    path: SamplePath
    start_time: float
    idle: int
    completions: list[float]
    next_h: float
    ah_index: int
    sh_index: int
    probe: Optional[list] = field(default=None, repr=False)


def counterfactual_from_state(state, probe: Optional[list] = None) -> CounterfactualState:
    """Snapshot a live ``SystemState``; the live state is not touched."""
    return CounterfactualState(
        params=state.params,
        path=state.path,
        start_time=state.now,
        idle=state.idle,
        completions=state.completion_times(),
        next_h=state.next_arrival[JobClass.H],
        ah_index=state.cursor.index[_AH],
        sh_index=state.cursor.index[_SH],
        probe=probe,
    )


def fresh_counterfactual(params: ModelParams, y: int, path: SamplePath) -> CounterfactualState:
    """Stationary-looking start: ``N - y`` busy servers with Exp(mu) residuals.

    Residuals are read from the SL stream (unused by the rollout), the first
    H arrival clock from ``AH[0]``.  By memorylessness this is the law of the
    idle process started at ``y``.
    """
    if not 0 <= y <= params.N:
        raise ValueError(f"idle level {y} outside 0..{params.N}")
    busy = params.N - y
    completions = [path.value_at(StreamId.SL, j) / params.mu for j in range(busy)]
    heapq.heapify(completions)
    return CounterfactualState(
        params=params,
        path=path,
        start_time=0.0,
        idle=y,
        completions=completions,
        next_h=path.value_at(_AH, 0) / (params.lambda_H * params.N),
        ah_index=1,
        sh_index=0,
    )


def default_max_transitions(N: int) -> int:
    return 64 * N * max(math.isqrt(N), 1)


def race_to_levels(
    cf: CounterfactualState, lower: int, upper: int, max_transitions: Optional[int] = None
) -> RaceOutcome:
    """Run the counterfactual until the idle level first equals ``lower`` or ``upper``."""
    if not 0 <= lower < upper:
        raise ValueError(f"need 0 <= lower < upper, got lower={lower}, upper={upper}")
    y = cf.idle
    if y <= lower:
        return RaceOutcome(RaceVerdict.HIT_LOWER, 0.0, 0)
    if y >= upper:
        return RaceOutcome(RaceVerdict.HIT_UPPER, 0.0, 0)
    params = cf.params
    cap = default_max_transitions(params.N) if max_transitions is None else max_transitions
    arrival_scale = 1.0 / (params.lambda_H * params.N)
    service_scale = 1.0 / params.mu
    value_at = cf.path.value_at
    probe = cf.probe
    heap = list(cf.completions)
    heappush, heappop = heapq.heappush, heapq.heappop
    t_h = cf.next_h
    jh, js = cf.ah_index, cf.sh_index
    start = cf.start_time
    n = 0
    while n < cap:
        n += 1
        # Ties go to the H arrival.
        if heap and heap[0] < t_h:
            t = heappop(heap)
            y += 1
            if y >= upper:
                return RaceOutcome(RaceVerdict.HIT_UPPER, t - start, n)
        else:
            t = t_h
            if y > 0:
                y -= 1
                done = t + value_at(_SH, js) * service_scale
                if probe is not None:
                    probe.append((_SH, js, done))
                heappush(heap, done)
                js += 1
                if y <= lower:
                    return RaceOutcome(RaceVerdict.HIT_LOWER, t - start, n)
            t_h = t + value_at(_AH, jh) * arrival_scale
            if probe is not None:
                probe.append((_AH, jh, t_h))
            jh += 1
    raise TransitionCapExceeded(
        f"race from idle={cf.idle} to levels ({lower}, {upper}) unresolved after {cap} transitions"
    )


def window_race(cf: CounterfactualState, w: float, lower: int = 1) -> RaceOutcome:
    """Run the counterfactual for at most ``w`` hours or until idle <= ``lower``.

    Returns ``HIT_LOWER`` with the hitting time, or ``WINDOW_EXPIRED`` with
    ``hit_time == w``.  A level hit exactly at ``w`` counts as a hit.
    """
    if not w > 0:
        raise ValueError(f"window must be positive, got {w}")
    y = cf.idle
    if y <= lower:
        return RaceOutcome(RaceVerdict.HIT_LOWER, 0.0, 0)
    params = cf.params
    arrival_scale = 1.0 / (params.lambda_H * params.N)
    service_scale = 1.0 / params.mu
    value_at = cf.path.value_at
    probe = cf.probe
    heap = list(cf.completions)
    heappush, heappop = heapq.heappush, heapq.heappop
    t_h = cf.next_h
    if probe is not None:
        probe.append((_AH, cf.ah_index - 1, t_h))
    jh, js = cf.ah_index, cf.sh_index
    start = cf.start_time
    horizon = start + w
    n = 0
    while True:
        if heap and heap[0] < t_h:
            if heap[0] > horizon:
                break
            heappop(heap)
            y += 1
            n += 1
        else:
            t = t_h
            if t > horizon:
                break
            n += 1
            if y > 0:
                y -= 1
                done = t + value_at(_SH, js) * service_scale
                if probe is not None:
                    probe.append((_SH, js, done))
                heappush(heap, done)
                js += 1
                if y <= lower:
                    return RaceOutcome(RaceVerdict.HIT_LOWER, t - start, n)
            t_h = t + value_at(_AH, jh) * arrival_scale
            if probe is not None:
                probe.append((_AH, jh, t_h))
            jh += 1
    return RaceOutcome(RaceVerdict.WINDOW_EXPIRED, w, n)


def window_check(cf: CounterfactualState, w: float) -> bool:
    """True iff the counterfactual idle level stays above 1 throughout ``w`` hours."""
    return window_race(cf, w, lower=1).verdict is RaceVerdict.WINDOW_EXPIRED


def pfi_decide(state, job_class: JobClass, params: ModelParams,
               max_transitions: Optional[int] = None) -> Decision:
    """Accept H iff a server is idle; accept L iff the race reaches floor(sqrt(N)) before 1."""
    if job_class == JobClass.H:
        return Decision.of(state.idle > 0)
    if params.sqrt_level <= 1 or state.idle <= 1:
        # Upper level collapses onto the lower one (N < 4), or tau_1 == 0.
        return Decision.REJECT
    cf = counterfactual_from_state(state)
    outcome = race_to_levels(cf, 1, params.sqrt_level, max_transitions)
    return Decision.of(outcome.verdict is RaceVerdict.HIT_UPPER)


def sss_decide(state, job_class: JobClass, params: ModelParams, w: float) -> Decision:
    """Accept H iff a server is idle; accept L iff the idle level avoids {0, 1} for ``w`` hours."""
    if job_class == JobClass.H:
        return Decision.of(state.idle > 0)
    if state.idle <= 1:
        return Decision.REJECT
    return Decision.of(window_check(counterfactual_from_state(state), w))
