"""Admission policies.

Every policy accepts an H job whenever a server is idle; they differ in how
they treat L jobs.  Policies are immutable descriptions: all mutable state
lives in :class:`~lossnet.engine.SystemState`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

from .analytic import sss_window, sufficient_window_constant
from .engine import init
from .lookahead import pfi_decide, sss_decide
from .model import Decision, JobClass, ModelParams

__all__ = [
    "AcceptAll",
    "Threshold",
    "PFI",
    "SSS",
    "CompositeAE",
    "CompositeRE",
    "PolicyKind",
    "decide",
    "parse_policy",
    "sufficient_window_constant",
    "sss_window",
    "CouplingStats",
    "coupled_run",
]


@dataclass(frozen=True)
class AcceptAll:
    def decide(self, job_class: JobClass, state) -> Decision:
        return Decision.ACCEPT if state.idle > 0 else Decision.REJECT

    def __str__(self) -> str:
        return "accept-all"


@dataclass(frozen=True)
class Threshold:
    """Trunk reservation: keep ``theta`` servers for H jobs.

    ``theta >= N`` simply never admits L.
    """

    theta: int

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError(f"theta must be non-negative, got {self.theta}")

    def decide(self, job_class: JobClass, state) -> Decision:
        if job_class == JobClass.H:
            return Decision.ACCEPT if state.idle > 0 else Decision.REJECT
        return Decision.ACCEPT if state.idle > self.theta else Decision.REJECT

    def __str__(self) -> str:
        return f"threshold:{self.theta}"


@dataclass(frozen=True)
class PFI:
    max_transitions: Optional[int] = None

    def decide(self, job_class: JobClass, state) -> Decision:
        return pfi_decide(state, job_class, state.params, self.max_transitions)

    def __str__(self) -> str:
        return "pfi"


@dataclass(frozen=True)
class SSS:
    w: float
    label: Optional[str] = field(default=None, compare=False)  # display name only

    def __post_init__(self):
        if not self.w > 0:
            raise ValueError(f"window must be positive, got {self.w}")

    def decide(self, job_class: JobClass, state) -> Decision:
        return sss_decide(state, job_class, state.params, self.w)

    def __str__(self) -> str:
        return self.label or f"sss:{self.w:.6g}"


def _check_children(left, right):
    for child in (left, right):
        if isinstance(child, (CompositeAE, CompositeRE)):
            raise ValueError("composite policies take non-composite children only")


@dataclass(frozen=True)
class CompositeAE:
    """Accept iff either child accepts, consulted on this policy's own state."""

    left: "PolicyKind"
    right: "PolicyKind"

    def __post_init__(self):
        _check_children(self.left, self.right)

    def decide(self, job_class: JobClass, state) -> Decision:
        if self.left.decide(job_class, state) is Decision.ACCEPT:
            return Decision.ACCEPT
        return self.right.decide(job_class, state)

    def __str__(self) -> str:
        return f"ae:{self.left},{self.right}"


@dataclass(frozen=True)
class CompositeRE:
    """Reject iff either child rejects."""

    left: "PolicyKind"
    right: "PolicyKind"

    def __post_init__(self):
        _check_children(self.left, self.right)

    def decide(self, job_class: JobClass, state) -> Decision:
        if self.left.decide(job_class, state) is Decision.REJECT:
            return Decision.REJECT
        return self.right.decide(job_class, state)

    def __str__(self) -> str:
        return f"re:{self.left},{self.right}"


PolicyKind = Union[AcceptAll, Threshold, PFI, SSS, CompositeAE, CompositeRE]


def decide(policy: PolicyKind, job_class: JobClass, state, params: Optional[ModelParams] = None) -> Decision:
    """Decision of ``policy`` for an arrival of ``job_class`` in ``state``.

    ``params`` defaults to ``state.params`` and is accepted for symmetry.
    """
    if params is not None and params != state.params:
        raise ValueError("params do not match the state")
    return policy.decide(job_class, state)


def _parse_simple(text: str, params: ModelParams) -> PolicyKind:
    text = text.strip()
    if text == "accept-all":
        return AcceptAll()
    if text == "pfi":
        return PFI()
    kind, sep, arg = text.partition(":")
    if not sep:
        raise ValueError(f"unknown policy {text!r}")
    if kind == "threshold":
        return Threshold(int(arg))
    if kind == "sss":
        if arg == "auto":
            return SSS(sss_window(params), label="sss:auto")
        if arg.startswith("c="):
            c = float(arg[2:])
            return SSS(sss_window(params, c_override=c), label=f"sss:c={arg[2:]}")
        return SSS(float(arg), label=f"sss:{arg}")
    raise ValueError(f"unknown policy {text!r}")


def parse_policy(text: str, params: ModelParams) -> PolicyKind:
    """Parse ``accept-all``, ``threshold:<theta>``, ``pfi``,
    ``sss:<w|auto|c=<const>>``, ``ae:<p1>,<p2>`` or ``re:<p1>,<p2>``.

    ``params`` supplies N for window computations.
    """
    text = text.strip()
    for prefix, cls in (("ae:", CompositeAE), ("re:", CompositeRE)):
        if text.startswith(prefix):
            parts = text[len(prefix):].split(",")
            if len(parts) != 2:
                raise ValueError(f"{text!r}: composite needs exactly two children")
            return cls(_parse_simple(parts[0], params), _parse_simple(parts[1], params))
    return _parse_simple(text, params)


# Coupled runs.  The left policy drives the trajectory.  While the two
# systems are coupled their states coincide, so the right policy is consulted
# on the left state; the first arrival on which the decisions differ is a
# decoupling.  At each left epoch boundary (an action that finds every server
# busy) the right system is re-synchronised to the left one, which the shared
# sample path makes exact.


@dataclass
class CouplingStats:
    params: ModelParams
    left: str
    right: str
    seed: int
    horizon: float
    epochs: int = 0
    decoupled_epochs: int = 0
    decouplings_before_first_epoch: int = 0
    first_decoupling_time: float = math.nan  # absolute hours, whole run
    first_decoupling_offsets: list = field(default_factory=list)  # hours after epoch start

    @property
    def frequency(self) -> float:
        return self.decoupled_epochs / self.epochs if self.epochs else math.nan


class _Watcher:
    """Left policy that also asks the right policy while the pair is coupled."""

    def __init__(self, left, right):
        self.left = left
        self.right = right
        self.coupled = True
        self.decoupled_at = None

    def decide(self, job_class, state):
        d = self.left.decide(job_class, state)
        if self.coupled and self.right.decide(job_class, state) is not d:
            self.coupled = False
            self.decoupled_at = state.now
        return d

    def __str__(self):
        return str(self.left)


def coupled_run(params: ModelParams, left, right, horizon: float, seed: int) -> CouplingStats:
    """Run ``left`` and ``right`` on the sample path of ``seed`` and count epoch decouplings."""
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    out = CouplingStats(params, str(left), str(right), seed, horizon)
    watcher = _Watcher(left, right)
    state = init(params, seed)
    epoch_start = None
    while state.next_event_time() <= horizon:
        if state.idle == 0:
            # Epoch boundary: close the running epoch and re-synchronise.
            if epoch_start is not None:
                out.epochs += 1
                if not watcher.coupled:
                    out.decoupled_epochs += 1
                    out.first_decoupling_offsets.append(watcher.decoupled_at - epoch_start)
            elif not watcher.coupled:
                out.decouplings_before_first_epoch += 1
            epoch_start = state.next_event_time()
            watcher.coupled = True
            watcher.decoupled_at = None
        state.step(watcher)
        if watcher.decoupled_at is not None and math.isnan(out.first_decoupling_time):
            out.first_decoupling_time = watcher.decoupled_at
    return out
