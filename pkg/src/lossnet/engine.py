"""Discrete-event simulation of the N-server two-class loss network.

Arrival clocks and service requirements come from a :class:`SamplePath`;
the j-th accepted job of class i is served for ``S_i(j) / mu`` hours, in
acceptance order, whatever its arrival order.  Jobs in service are kept in a
heap of absolute completion times.

Besides rewards, the engine keeps the short memory needed to recognise
regeneration instants (:class:`HistoryTracker`) and logs candidate epoch
boundaries as it goes, so long runs do not have to store every action.
"""
from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Optional

import numpy as np

from .model import Decision, JobClass, ModelParams
from .samplepath import Cursor, SamplePath, StreamId

__all__ = [
    "PolicyContractError",
    "HistoryTracker",
    "ActionLog",
    "Event",
    "SystemState",
    "TrajectoryStats",
    "init",
    "step",
    "run",
    "write_event_log",
]

_H = int(JobClass.H)
_L = int(JobClass.L)
_INF = math.inf
_CLASSES = (JobClass.H, JobClass.L)
_A_STREAMS = (int(StreamId.AH), int(StreamId.AL))
_S_STREAMS = (int(StreamId.SH), int(StreamId.SL))

# event kinds
H_ARRIVAL = "H_arrival"
L_ARRIVAL = "L_arrival"
DEPARTURE = "departure"


class PolicyContractError(RuntimeError):
    """A policy tried to admit a job into a full system."""


class HistoryTracker:
    """Memory of the realised idle process used to detect epochs.

    Times are absolute hours.  ``last_hit[y]`` holds the last instant the
    idle count equalled ``y`` before leaving it; while the count sits at
    ``y`` the answer is "now" (see :meth:`last_hit_time`).
    """

    def __init__(self, N: int, sss_window: Optional[float] = None):
        m = math.isqrt(N)
        self.sqrt_level = m
        self.tracked = frozenset({0, 1, m - 1, m})
        self.sss_window = sss_window
        self.last_L_reject: Optional[float] = None  # r
        self.last_L_accept: Optional[float] = None  # a
        self.last_L_service: Optional[float] = None  # s, a duration
        self.first_L_reject_after_1: Optional[float] = None  # f
        self.last_hit: dict[int, Optional[float]] = {y: None for y in self.tracked}
        self.last_L_job: Optional[int] = None
        self.last_L_in_service = False
        self.hit_m1_during_last_L = False

    # -- updates --------------------------------------------------------
    def level_change(self, old: int, new: int, t: float) -> None:
        if old in self.tracked:
            self.last_hit[old] = t
        if old == 1 or new == 1:
            self.first_L_reject_after_1 = None
        if new == self.sqrt_level - 1 and self.last_L_in_service:
            self.hit_m1_during_last_L = True

    def L_accepted(self, t: float, service: float, job_id: int) -> None:
        self.last_L_accept = t
        self.last_L_service = service
        self.last_L_job = job_id
        self.last_L_in_service = True
        self.hit_m1_during_last_L = False

    def L_rejected(self, t: float, idle: int) -> None:
        self.last_L_reject = t
        if idle != 1 and self.first_L_reject_after_1 is None:
            self.first_L_reject_after_1 = t

    def departed(self, job_id: int) -> None:
        if job_id == self.last_L_job:
            self.last_L_in_service = False

    # -- queries --------------------------------------------------------
    def last_hit_time(self, y: int, idle: int, now: float) -> float:
        if idle == y:
            return now
        t = self.last_hit.get(y)
        return -_INF if t is None else t

    def event_U(self, idle: int, now: float) -> bool:
        """An L job was rejected since the idle count last equalled 1."""
        r = self.last_L_reject
        return r is not None and r > self.last_hit_time(1, idle, now)

    def event_W(self) -> bool:
        """The last accepted L job is still in service."""
        return self.last_L_in_service

    def event_P(self, idle: int, now: float) -> bool:
        """An L job was accepted since the count last equalled floor(sqrt N), and the
        count has not equalled floor(sqrt N) - 1 while that job was in service."""
        a = self.last_L_accept
        if a is None:
            return False
        return a > self.last_hit_time(self.sqrt_level, idle, now) and not self.hit_m1_during_last_L

    def event_P_sss(self, now: float) -> bool:
        a = self.last_L_accept
        return a is not None and self.sss_window is not None and now - a < self.sss_window

    def pfi_epoch_start(self, idle: int, now: float) -> bool:
        return (
            idle == 1
            and self.last_L_in_service
            and not self.event_U(idle, now)
            and self.event_P(idle, now)
        )


@dataclass
class ActionLog:
    """Columnar record of action instants, taken immediately before the action.

    ``cum_*`` columns are running totals up to (not including) the action.
    With ``full=False`` only rows that can open an epoch are kept: idle == 0,
    or idle == 1 with the PFI pattern (not U, P, W).
    """

    time: list = field(default_factory=list)
    idle: list = field(default_factory=list)
    U: list = field(default_factory=list)
    P: list = field(default_factory=list)
    W: list = field(default_factory=list)
    cum_idle: list = field(default_factory=list)
    cum_h_rej: list = field(default_factory=list)
    cum_l_acc: list = field(default_factory=list)
    index: list = field(default_factory=list)
    full: bool = False
    # totals at the end of the run, to close the last partial span
    final: dict = field(default_factory=dict)

    def append(self, time, idle, U, P, W, cum_idle, cum_h_rej, cum_l_acc, index):
        self.time.append(time)
        self.idle.append(idle)
        self.U.append(U)
        self.P.append(P)
        self.W.append(W)
        self.cum_idle.append(cum_idle)
        self.cum_h_rej.append(cum_h_rej)
        self.cum_l_acc.append(cum_l_acc)
        self.index.append(index)

    def __len__(self) -> int:
        return len(self.time)

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "time": np.asarray(self.time, dtype=float),
            "idle": np.asarray(self.idle, dtype=np.int64),
            "U": np.asarray(self.U, dtype=bool),
            "P": np.asarray(self.P, dtype=bool),
            "W": np.asarray(self.W, dtype=bool),
            "cum_idle": np.asarray(self.cum_idle, dtype=float),
            "cum_h_rej": np.asarray(self.cum_h_rej, dtype=np.int64),
            "cum_l_acc": np.asarray(self.cum_l_acc, dtype=np.int64),
            "index": np.asarray(self.index, dtype=np.int64),
        }


class Event(NamedTuple):
    time: float
    kind: str
    job_class: Optional[JobClass]
    decision: Optional[Decision]
    idle: int  # after the event
    reward: float


class SystemState:
    """Live state of one replication.

    Use :func:`init` to build one.  ``in_service`` is a heap of
    ``(completion_time, job_id, class)``.
    """

    def __init__(self, params: ModelParams, seed: int, *, path: Optional[SamplePath] = None,
                 horizon: float = _INF, n_slabs: int = 0, full_log: bool = False,
                 sss_window: Optional[float] = None):
        self.params = params
        self.seed = seed
        self.path = path if path is not None else SamplePath(seed)
        self.cursor = Cursor()
        self.now = 0.0
        self.idle = params.N
        self.in_service: list[tuple[float, int, int]] = []
        self.next_arrival = [_INF, _INF]
        self.accepted = [0, 0]
        self.rejected = [0, 0]
        self.completed = [0, 0]
        self.busy_by_class = [0, 0]
        self.reward = 0.0
        self.idle_integral = 0.0
        self.completed_effort = 0.0  # service hours of finished jobs
        self.n_actions = 0
        self._job_seq = 0
        self._start: dict[int, float] = {}
        self.tracker = HistoryTracker(params.N, sss_window)
        self.log = ActionLog(full=full_log)
        self.horizon = horizon
        self.n_slabs = n_slabs
        if n_slabs:
            self.slab_width = horizon / n_slabs
            self.slab_reward = np.zeros(n_slabs)
            self.slab_idle = np.zeros(n_slabs)
            self.slab_h_rej = np.zeros(n_slabs)
            self._slab = 0
            self._slab_end = self.slab_width
        else:
            self._slab = -1
            self._slab_end = _INF

    # -- views used by policies and lookahead ---------------------------
    @property
    def Y(self) -> int:
        return self.idle

    def completion_times(self) -> list[float]:
        # A heap of tuples keyed on time is also a heap of its times.
        return [entry[0] for entry in self.in_service]

    def next_event_time(self) -> float:
        dep = self.in_service[0][0] if self.in_service else _INF
        return min(self.next_arrival[_H], self.next_arrival[_L], dep)

    # -- internals ------------------------------------------------------
    def _advance(self, t: float) -> None:
        y = self.idle
        now = self.now
        if y:
            self.idle_integral += y * (t - now)
        if self._slab >= 0:
            while t > self._slab_end and self._slab < self.n_slabs - 1:
                self.slab_idle[self._slab] += y * (self._slab_end - now)
                now = self._slab_end
                self._slab += 1
                self._slab_end = (self._slab + 1) * self.slab_width
            self.slab_idle[self._slab] += y * (t - now)
        self.now = t

    def _set_idle(self, new: int, t: float) -> None:
        old = self.idle
        self.idle = new
        self.tracker.level_change(old, new, t)

    def _record_action(self) -> None:
        tr = self.tracker
        y = self.idle
        now = self.now
        if self.log.full:
            self.log.append(now, y, tr.event_U(y, now), tr.event_P(y, now), tr.event_W(),
                            self.idle_integral, self.rejected[_H], self.accepted[_L], self.n_actions)
        elif y == 0 or (y == 1 and tr.pfi_epoch_start(y, now)):
            self.log.append(now, y, tr.event_U(y, now), tr.event_P(y, now), tr.event_W(),
                            self.idle_integral, self.rejected[_H], self.accepted[_L], self.n_actions)

    def snapshot_totals(self) -> dict:
        return {
            "time": self.now,
            "cum_idle": self.idle_integral,
            "cum_h_rej": self.rejected[_H],
            "cum_l_acc": self.accepted[_L],
            "index": self.n_actions,
        }

    def step(self, policy) -> Event:
        """Advance to the next event and apply it.  See :func:`step`."""
        t_h, t_l = self.next_arrival
        dep = self.in_service[0][0] if self.in_service else _INF
        # Tie order: H arrival, then L arrival, then departure.
        if t_h <= t_l and t_h <= dep:
            t, kind, cls = t_h, H_ARRIVAL, _H
        elif t_l <= dep:
            t, kind, cls = t_l, L_ARRIVAL, _L
        else:
            t, kind, cls = dep, DEPARTURE, -1
        if t == _INF:
            raise RuntimeError("no pending events")
        self._advance(t)
        self._record_action()
        self.n_actions += 1
        params = self.params
        path = self.path
        idx = self.cursor.index

        if cls < 0:
            _, job_id, jcls = heapq.heappop(self.in_service)
            self.completed[jcls] += 1
            self.busy_by_class[jcls] -= 1
            self.completed_effort += t - self._start.pop(job_id)
            self.tracker.departed(job_id)
            self._set_idle(self.idle + 1, t)
            return Event(t, kind, _CLASSES[jcls], None, self.idle, 0.0)

        jc = _CLASSES[cls]
        decision = policy.decide(jc, self)
        reward = 0.0
        if decision is Decision.ACCEPT:
            if self.idle <= 0:
                raise PolicyContractError(f"{policy!r} admitted a {jc.name} job with no idle server")
            s_stream = _S_STREAMS[cls]
            j = idx[s_stream]
            idx[s_stream] = j + 1
            service = path.value_at(s_stream, j) / params.mu
            job_id = self._job_seq
            self._job_seq += 1
            heapq.heappush(self.in_service, (t + service, job_id, cls))
            self._start[job_id] = t
            self.accepted[cls] += 1
            self.busy_by_class[cls] += 1
            reward = params.r_H if cls == _H else params.r_L
            self.reward += reward
            if self._slab >= 0:
                self.slab_reward[self._slab] += reward
            if cls == _L:
                self.tracker.L_accepted(t, service, job_id)
            self._set_idle(self.idle - 1, t)
        else:
            self.rejected[cls] += 1
            if cls == _L:
                self.tracker.L_rejected(t, self.idle)
            elif self._slab >= 0:
                self.slab_h_rej[self._slab] += 1
        # Draw the next arrival of this class.
        a_stream = _A_STREAMS[cls]
        rate = params.lambda_H if cls == _H else params.lambda_L
        j = idx[a_stream]
        idx[a_stream] = j + 1
        self.next_arrival[cls] = t + path.value_at(a_stream, j) / (rate * params.N)
        return Event(t, kind, jc, decision, self.idle, reward)


def init(params: ModelParams, seed: int, **kwargs) -> SystemState:
    """Empty system at time 0 with the first arrival of each class scheduled.

    ``params`` is validated on construction, so an invalid parameter set never
    reaches this point.
    """
    state = SystemState(params, seed, **kwargs)
    cur, path = state.cursor, state.path
    for cls, stream, rate in ((_H, StreamId.AH, params.lambda_H), (_L, StreamId.AL, params.lambda_L)):
        j = cur.index[stream]
        cur.index[stream] = j + 1
        state.next_arrival[cls] = path.value_at(stream, j) / (rate * params.N)
    return state


def step(state: SystemState, policy) -> tuple[SystemState, Event]:
    """Advance ``state`` to its next event in place; returns ``(state, event)``."""
    event = state.step(policy)
    return state, event


@dataclass
class TrajectoryStats:
    """Finite-horizon summary of one replication."""

    params: ModelParams
    policy: str
    seed: int
    horizon: float
    warmup: float
    reward_total: float
    reward_rate: float
    reward_rate_warm: float
    idle_time_avg: float
    h_rejections_per_hour: float
    l_rejections_per_hour: float
    accepted: tuple
    rejected: tuple
    completed: tuple
    in_service: tuple
    n_actions: int
    idle_integral: float
    completed_effort: float
    open_effort: float
    slab_width: float
    slab_reward: np.ndarray
    slab_idle: np.ndarray
    slab_h_rej: np.ndarray
    action_log: ActionLog
    events: Optional[list] = None

    @property
    def slab_reward_rate(self) -> np.ndarray:
        return self.slab_reward / self.slab_width

    def summary(self) -> dict[str, Any]:
        return {
            "N": self.params.N,
            "policy": self.policy,
            "seed": self.seed,
            "horizon": self.horizon,
            "reward_rate": self.reward_rate,
            "reward_rate_warm": self.reward_rate_warm,
            "idle_time_avg": self.idle_time_avg,
            "h_rejections_per_hour": self.h_rejections_per_hour,
            "l_rejections_per_hour": self.l_rejections_per_hour,
            "n_actions": self.n_actions,
        }


def _policy_window(policy) -> Optional[float]:
    w = getattr(policy, "w", None)
    if w is None:
        for child in (getattr(policy, "left", None), getattr(policy, "right", None)):
            w = w if w is not None else getattr(child, "w", None)
    return w


def run(params: ModelParams, policy, horizon_T: float, seed: int, *, warmup: float = 0.05,
        n_slabs: int = 200, record_events: bool = False, full_log: bool = False,
        path: Optional[SamplePath] = None) -> TrajectoryStats:
    """Simulate ``policy`` for ``horizon_T`` hours on the sample path of ``seed``.

    ``warmup`` is the fraction of the horizon dropped for ``reward_rate_warm``;
    it is rounded to a whole number of slabs.
    """
    if not horizon_T > 0:
        raise ValueError(f"horizon must be positive, got {horizon_T}")
    sss_window = _policy_window(policy)
    state = init(params, seed, path=path, horizon=horizon_T, n_slabs=n_slabs,
                 full_log=full_log, sss_window=sss_window)
    events: Optional[list] = [] if record_events else None
    step_ = state.step
    while state.next_event_time() <= horizon_T:
        ev = step_(policy)
        if events is not None:
            events.append(ev)
    state._advance(horizon_T)
    state.log.final = state.snapshot_totals()

    warm_slabs = int(round(warmup * n_slabs))
    warm_time = warm_slabs * state.slab_width
    rr_warm = float(state.slab_reward[warm_slabs:].sum() / (horizon_T - warm_time))
    open_effort = sum(horizon_T - state._start[jid] for _, jid, _ in state.in_service)
    return TrajectoryStats(
        params=params,
        policy=str(policy),
        seed=seed,
        horizon=horizon_T,
        warmup=warm_time,
        reward_total=state.reward,
        reward_rate=state.reward / horizon_T,
        reward_rate_warm=rr_warm,
        idle_time_avg=state.idle_integral / horizon_T,
        h_rejections_per_hour=state.rejected[_H] / horizon_T,
        l_rejections_per_hour=state.rejected[_L] / horizon_T,
        accepted=tuple(state.accepted),
        rejected=tuple(state.rejected),
        completed=tuple(state.completed),
        in_service=tuple(state.busy_by_class),
        n_actions=state.n_actions,
        idle_integral=state.idle_integral,
        completed_effort=state.completed_effort,
        open_effort=open_effort,
        slab_width=state.slab_width,
        slab_reward=state.slab_reward,
        slab_idle=state.slab_idle,
        slab_h_rej=state.slab_h_rej,
        action_log=state.log,
        events=events,
    )


def write_event_log(events, fp) -> None:
    """Write events as newline-delimited JSON: time, kind, class, decision, Y."""
    for ev in events:
        fp.write(json.dumps({
            "time": ev.time,
            "kind": ev.kind,
            "class": None if ev.job_class is None else ev.job_class.name,
            "decision": None if ev.decision is None else ev.decision.value,
            "Y": ev.idle,
        }) + "\n")
