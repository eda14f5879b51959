"""From trajectories to gap estimates.

Epoch boundaries come from the action log the engine keeps.  A PFI epoch
opens at an action instant where one server is idle, no L job has been
rejected since the idle count last equalled 1, and the last accepted L job
is still in service under an unbroken promise of idleness (the U, P, W
pattern tracked by :class:`~lossnet.engine.HistoryTracker`).  An SSS epoch
opens whenever an action finds the system full.

Over regeneration cycles the fluid-minus-policy gap is a ratio of
expectations,

    r_L mu E[idle server-hours] / E[duration] + (r_H - r_L) E[H rejections] / E[duration],

estimated here by the classical ratio estimator with a delta-method error.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy import stats

from .analytic import best_threshold, fluid_reward
from .model import ModelParams

__all__ = [
    "EpochRecord",
    "EpochTable",
    "Method",
    "GapEstimate",
    "RegretDecomposition",
    "TooFewEpochs",
    "detect_pfi_epochs",
    "detect_sss_epochs",
    "regenerative_gap",
    "idleness_ratio",
    "h_rejection_ratio",
    "batch_means",
    "time_average_gap",
    "gap_estimate",
    "decomposition_report",
    "lag1_autocorrelation",
]


class TooFewEpochs(ValueError):
    pass


class Method(str, enum.Enum):
    REGENERATIVE = "regenerative"
    BATCH_MEANS = "batch_means"
    EXACT = "exact"


@dataclass(frozen=True)
class EpochRecord:
    start: float
    end: float
    idleness_integral: float
    H_rejections: int
    L_acceptances: int
    action_count: int

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class EpochTable:
    """Consecutive epochs stored column-wise."""

    start: np.ndarray
    end: np.ndarray
    idleness_integral: np.ndarray
    H_rejections: np.ndarray
    L_acceptances: np.ndarray
    action_count: np.ndarray

    @property
    def duration(self) -> np.ndarray:
        return self.end - self.start

    def __len__(self) -> int:
        return int(self.start.size)

    def __getitem__(self, i: int) -> EpochRecord:
        return EpochRecord(float(self.start[i]), float(self.end[i]), float(self.idleness_integral[i]),
                           int(self.H_rejections[i]), int(self.L_acceptances[i]), int(self.action_count[i]))

    def __iter__(self) -> Iterator[EpochRecord]:
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_records(cls, records: Sequence[EpochRecord]) -> "EpochTable":
        cols = list(zip(*[(r.start, r.end, r.idleness_integral, r.H_rejections, r.L_acceptances,
                           r.action_count) for r in records])) or [()] * 6
        return cls(*(np.asarray(c, dtype=float if i < 3 else np.int64) for i, c in enumerate(cols)))

    @classmethod
    def concat(cls, tables: Sequence["EpochTable"]) -> "EpochTable":
        """Pool epochs of independent replications (order is irrelevant to the ratio estimators)."""
        names = ("start", "end", "idleness_integral", "H_rejections", "L_acceptances", "action_count")
        return cls(*(np.concatenate([getattr(t, n) for t in tables]) for n in names))


def _log_arrays(log):
    return log.arrays() if hasattr(log, "arrays") else {k: np.asarray(v) for k, v in log.items()}


def _epochs_at(cols: dict, mask: np.ndarray) -> EpochTable:
    rows = np.flatnonzero(mask)
    if rows.size < 2:
        empty = np.zeros(0)
        ints = np.zeros(0, dtype=np.int64)
        return EpochTable(empty, empty.copy(), empty.copy(), ints, ints.copy(), ints.copy())
    a, b = rows[:-1], rows[1:]

    def diff(name):
        return cols[name][b] - cols[name][a]

    return EpochTable(
        start=cols["time"][a],
        end=cols["time"][b],
        idleness_integral=diff("cum_idle"),
        H_rejections=diff("cum_h_rej"),
        L_acceptances=diff("cum_l_acc"),
        action_count=diff("index"),
    )


def detect_pfi_epochs(log) -> EpochTable:
    """Epochs delimited by action instants with idle == 1, not U, P and W.

    Only complete epochs are returned: the span before the first boundary
    and after the last one are discarded.
    """
    cols = _log_arrays(log)
    if cols["time"].size == 0:
        return _epochs_at(cols, np.zeros(0, dtype=bool))
    mask = (cols["idle"] == 1) & ~cols["U"] & cols["P"] & cols["W"]
    return _epochs_at(cols, mask)


def detect_sss_epochs(log) -> EpochTable:
    """Epochs delimited by action instants that find every server busy."""
    cols = _log_arrays(log)
    if cols["time"].size == 0:
        return _epochs_at(cols, np.zeros(0, dtype=bool))
    return _epochs_at(cols, cols["idle"] == 0)


@dataclass(frozen=True)
class GapEstimate:
    point: float
    std_error: float
    n: int  # epochs or batches
    method: Method

    def ci(self, level: float = 0.95) -> tuple[float, float]:
        z = stats.norm.ppf(0.5 + level / 2)
        return self.point - z * self.std_error, self.point + z * self.std_error


def _ratio(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    n = num.size
    R = num.sum() / den.sum()
    if n < 2:
        return float(R), math.nan
    resid = num - R * den
    se = math.sqrt(resid.var(ddof=1) / n) / den.mean()
    return float(R), float(se)


def _check_count(epochs: EpochTable, min_epochs: int) -> None:
    if len(epochs) < min_epochs:
        raise TooFewEpochs(f"{len(epochs)} epochs, need at least {min_epochs}")


def regenerative_gap(epochs: EpochTable, params: ModelParams, which: str = "pfi",
                     min_epochs: int = 30) -> GapEstimate:
    """Fluid-minus-policy gap from regeneration cycles; ``which`` is only a label."""
    _check_count(epochs, min_epochs)
    per_epoch = (params.r_L * params.mu * epochs.idleness_integral
                 + (params.r_H - params.r_L) * epochs.H_rejections)
    point, se = _ratio(per_epoch, epochs.duration)
    return GapEstimate(point, se, len(epochs), Method.REGENERATIVE)


def idleness_ratio(epochs: EpochTable, min_epochs: int = 30) -> GapEstimate:
    """E[idle server-hours per epoch] / E[epoch duration]."""
    _check_count(epochs, min_epochs)
    point, se = _ratio(epochs.idleness_integral, epochs.duration)
    return GapEstimate(point, se, len(epochs), Method.REGENERATIVE)


def h_rejection_ratio(epochs: EpochTable, min_epochs: int = 30) -> GapEstimate:
    """E[H rejections per epoch] / E[epoch duration]."""
    _check_count(epochs, min_epochs)
    point, se = _ratio(epochs.H_rejections.astype(float), epochs.duration)
    return GapEstimate(point, se, len(epochs), Method.REGENERATIVE)


def batch_means(series, n_batches: int = 20, warmup_fraction: float = 0.0) -> GapEstimate:
    """Mean of an equally spaced series with a batch-means standard error.

    The first ``warmup_fraction`` of the series is dropped, then any leading
    remainder so the rest splits into ``n_batches`` equal batches.
    """
    if n_batches < 10:
        raise ValueError(f"need at least 10 batches, got {n_batches}")
    x = np.asarray(series, dtype=float)
    x = x[int(round(warmup_fraction * x.size)):]
    size = x.size // n_batches
    if size < 1:
        raise ValueError(f"series of length {x.size} is too short for {n_batches} batches")
    x = x[x.size - size * n_batches:]
    means = x.reshape(n_batches, size).mean(axis=1)
    se = float(means.std(ddof=1) / math.sqrt(n_batches))
    return GapEstimate(float(means.mean()), se, n_batches, Method.BATCH_MEANS)


def time_average_gap(traj, n_batches: int = 20, warmup_fraction: float = 0.05) -> GapEstimate:
    """Fluid reward minus the batch-means time-average reward of a trajectory."""
    est = batch_means(traj.slab_reward_rate, n_batches, warmup_fraction)
    return GapEstimate(fluid_reward(traj.params) - est.point, est.std_error, est.n, Method.BATCH_MEANS)


def gap_estimate(traj, which: str, min_epochs: int = 30, n_batches: int = 20,
                 warmup_fraction: float = 0.05) -> tuple[GapEstimate, Optional[EpochTable]]:
    """Regenerative gap for ``which`` in {"pfi", "sss"}; batch means (with a warning) when epochs are scarce."""
    detect = detect_pfi_epochs if which == "pfi" else detect_sss_epochs
    epochs = detect(traj.action_log)
    try:
        return regenerative_gap(epochs, traj.params, which, min_epochs), epochs
    except TooFewEpochs as exc:
        warnings.warn(f"{exc}; falling back to batch means", RuntimeWarning, stacklevel=2)
        return time_average_gap(traj, n_batches, warmup_fraction), epochs


def lag1_autocorrelation(x) -> float:
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    denom = float(np.dot(x, x))
    return float(np.dot(x[:-1], x[1:]) / denom) if denom > 0 else 0.0


@dataclass
class RegretDecomposition:
    """Gap components in currency/hour.

    The PFI reward lower-bounds the offline optimum and the best threshold
    reward lower-bounds the online optimum, so ``C_vol_upper`` over-states the
    volatility cost and the uncertainty columns are estimates, not bounds.
    """

    R_fluid: float
    R_on_hat: float
    theta_star: int
    R_PFI_hat: Optional[float] = None
    R_PFI_se: Optional[float] = None
    R_SSS_hat: Optional[float] = None
    R_SSS_se: Optional[float] = None
    C_vol_upper: Optional[float] = None
    C_vol_se: Optional[float] = None
    C_uncertainty_hat: Optional[float] = None
    C_uncertainty_se: Optional[float] = None
    C_short_upper: Optional[float] = None
    C_short_se: Optional[float] = None
    notes: list = field(default_factory=lambda: [
        "R_PFI <= R_off, so C_vol_upper >= C_vol",
        "R_on_hat is the best trunk-reservation reward, a lower bound on R_on",
    ])

    def violations(self, k: float = 3.0) -> list[str]:
        """Components that are negative by more than ``k`` standard errors."""
        out = []
        for name in ("C_vol_upper", "C_uncertainty_hat", "C_short_upper"):
            v, se = getattr(self, name), getattr(self, name.replace("_upper", "_se").replace("_hat", "_se"))
            if v is not None and v < -k * (se or 0.0):
                out.append(name)
        return out


def decomposition_report(params: ModelParams, pfi: Optional[GapEstimate] = None,
                         sss: Optional[GapEstimate] = None,
                         on: Optional[tuple[int, float]] = None) -> RegretDecomposition:
    """Assemble the regret table from gap estimates (fluid minus policy reward).

    ``on`` is ``(theta*, reward)``; the exact best threshold is used when omitted.
    """
    if pfi is None and sss is None and on is None:
        raise ValueError("need at least one policy estimate")
    R_fluid = fluid_reward(params)
    theta, R_on = on if on is not None else best_threshold(params)
    rep = RegretDecomposition(R_fluid=R_fluid, R_on_hat=R_on, theta_star=theta)
    if pfi is not None:
        rep.R_PFI_hat = R_fluid - pfi.point
        rep.R_PFI_se = pfi.std_error
        rep.C_vol_upper = pfi.point
        rep.C_vol_se = pfi.std_error
        rep.C_uncertainty_hat = rep.R_PFI_hat - R_on
        rep.C_uncertainty_se = pfi.std_error
    if sss is not None:
        rep.R_SSS_hat = R_fluid - sss.point
        rep.R_SSS_se = sss.std_error
        rep.C_short_upper = rep.R_SSS_hat - R_on
        rep.C_short_se = sss.std_error
    return rep
