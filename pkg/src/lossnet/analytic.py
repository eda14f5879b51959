"""Exactly solvable quantities used as benchmarks and test oracles.

* the fluid reward and the sufficient SSS lookahead window;
* birth-death stationary laws, in particular the busy-server chain of a
  trunk-reservation (threshold) policy;
* hitting and finite-horizon absorption probabilities of the reject-all-L
  idle-server chain, which validate the lookahead rollouts;
* the classical gambler's-ruin formula.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg, special, stats

from .model import ModelParams

__all__ = [
    "BirthDeathSpec",
    "ResourceLimitError",
    "fluid_reward",
    "sufficient_window_constant",
    "sss_window",
    "stationary_distribution",
    "generator_matrix",
    "threshold_chain",
    "threshold_reward",
    "threshold_rewards",
    "best_threshold",
    "idle_chain",
    "race_probability",
    "transient_absorption",
    "walk_ruin_prob",
]


class ResourceLimitError(RuntimeError):
    """A computation would need more work than the configured budget."""


@dataclass(frozen=True)
class BirthDeathSpec:
    """Birth-death chain on ``0..M``; ``birth[M]`` and ``death[0]`` must be 0."""

    birth: np.ndarray
    death: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.birth, dtype=float)
        d = np.asarray(self.death, dtype=float)
        object.__setattr__(self, "birth", b)
        object.__setattr__(self, "death", d)
        if b.shape != d.shape or b.ndim != 1 or b.size < 1:
            raise ValueError("birth and death must be equal-length vectors")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(d))):
            raise ValueError("rates must be finite")
        if np.any(b < 0) or np.any(d < 0):
            raise ValueError("rates must be non-negative")
        if d[0] != 0 or b[-1] != 0:
            raise ValueError("need death[0] == 0 and birth[M] == 0")

    @property
    def M(self) -> int:
        return self.birth.size - 1


def fluid_reward(params: ModelParams) -> float:
    """``N r_H lambda_H + N r_L (mu - lambda_H)``."""
    N = params.N
    return N * params.r_H * params.lambda_H + N * params.r_L * (params.mu - params.lambda_H)


def sufficient_window_constant(lambda_H: float, lambda_L: float, mu: float) -> float:
    num = 8 * (7 * lambda_H + mu) * (lambda_H + mu) * (lambda_H + lambda_L + mu) ** 2
    den = lambda_H * (mu - lambda_H) ** 2 * (lambda_H + lambda_L - mu) ** 2
    return num / den


def sss_window(params: ModelParams, N: Optional[float] = None, c_override: Optional[float] = None) -> float:
    """Window ``C log(N) / N`` hours; ``C`` is the sufficient constant unless overridden.

    ``N`` defaults to ``params.N``; any real ``N >= 2`` is accepted.
    """
    n = params.N if N is None else float(N)
    if n < 2:
        raise ValueError(f"window needs N >= 2, got {n}")
    if c_override is None:
        c = sufficient_window_constant(params.lambda_H, params.lambda_L, params.mu)
    elif c_override > 0:
        c = c_override
    else:
        raise ValueError(f"c_override must be positive, got {c_override}")
    return c * math.log(n) / n


def stationary_distribution(spec: BirthDeathSpec) -> np.ndarray:
    """Product-form stationary law, accumulated in log space."""
    b, d = spec.birth, spec.death
    if spec.M == 0:
        return np.ones(1)
    if np.any(b[:-1] <= 0) or np.any(d[1:] <= 0):
        raise ValueError("chain is not irreducible on 0..M")
    steps = np.log(b[:-1]) - np.log(d[1:])
    logw = np.concatenate(([0.0], np.cumsum(steps)))
    return np.exp(logw - special.logsumexp(logw))


def generator_matrix(spec: BirthDeathSpec) -> np.ndarray:
    """Dense generator Q (rows sum to zero); meant for small chains and checks."""
    M = spec.M
    Q = np.zeros((M + 1, M + 1))
    idx = np.arange(M)
    Q[idx, idx + 1] = spec.birth[:-1]
    Q[idx + 1, idx] = spec.death[1:]
    Q[np.diag_indices(M + 1)] = -Q.sum(axis=1)
    return Q


def _theta_level(params: ModelParams, theta: int) -> int:
    if theta < 0:
        raise ValueError(f"theta must be non-negative, got {theta}")
    # theta >= N never admits L, same as theta == N.
    return params.N - min(int(theta), params.N)


def threshold_chain(params: ModelParams, theta: int) -> BirthDeathSpec:
    """Busy-server count under trunk reservation ``theta``."""
    N = params.N
    K = _theta_level(params, theta)
    k = np.arange(N + 1)
    birth = np.where(k < K, N * (params.lambda_H + params.lambda_L), N * params.lambda_H).astype(float)
    birth[N] = 0.0
    death = k * params.mu
    return BirthDeathSpec(birth, death.astype(float))


def threshold_reward(params: ModelParams, theta: int) -> float:
    """Long-run reward rate of trunk reservation ``theta`` (accept L iff idle > theta)."""
    N = params.N
    K = _theta_level(params, theta)
    pi = stationary_distribution(threshold_chain(params, theta))
    p_h = 1.0 - pi[N]
    p_l = pi[:K].sum()
    return params.r_H * N * params.lambda_H * p_h + params.r_L * N * params.lambda_L * p_l


def threshold_rewards(params: ModelParams) -> np.ndarray:
    """Reward of every threshold ``theta = 0..N`` in one O(N) pass.

    With ``K = N - theta`` the unnormalised weights are ``exp(A_k)`` for
    ``k <= K`` and ``exp(K (log r1 - log r2) + B_k)`` for ``k >= K``, where
    ``A_k = k log r1 - log k!`` and ``B_k = k log r2 - log k!`` with offered
    loads ``r1 = N (lambda_H + lambda_L) / mu`` and ``r2 = N lambda_H / mu``.
    Prefix and suffix log-sums then give every normaliser at once.
    """
    N = params.N
    k = np.arange(N + 1)
    lg = special.gammaln(k + 1.0)
    l1 = math.log(N * (params.lambda_H + params.lambda_L) / params.mu)
    l2 = math.log(N * params.lambda_H / params.mu)
    A = k * l1 - lg
    B = k * l2 - lg
    prefix = np.logaddexp.accumulate(A)  # log sum_{j<=K} e^{A_j}
    suffix = np.full(N + 1, -np.inf)  # log sum_{j>K} e^{B_j}
    if N > 0:
        suffix[:-1] = np.logaddexp.accumulate(B[::-1])[::-1][1:]
    K = k
    shift = K * (l1 - l2)
    logZ = np.logaddexp(prefix, shift + suffix)
    log_block = shift + B[N] - logZ
    below = np.full(N + 1, -np.inf)  # log P(busy < K)
    below[1:] = prefix[:-1] - logZ[1:]
    reward_by_K = (params.r_H * N * params.lambda_H * (1.0 - np.exp(log_block))
                   + params.r_L * N * params.lambda_L * np.exp(below))
    return reward_by_K[::-1].copy()  # index theta = N - K


def best_threshold(params: ModelParams) -> tuple[int, float]:
    """``(theta*, reward)``; ties go to the smaller theta."""
    rewards = threshold_rewards(params)
    theta = int(np.argmax(rewards))
    return theta, float(rewards[theta])


def idle_chain(params: ModelParams) -> BirthDeathSpec:
    """Idle-server count when every L job is rejected and every H accepted."""
    N = params.N
    y = np.arange(N + 1)
    up = params.mu * (N - y).astype(float)
    down = np.where(y > 0, N * params.lambda_H, 0.0)
    return BirthDeathSpec(up, down)


def race_probability(params: ModelParams, y: int, lower: int, upper: int,
                     up_rate=None, down_rate=None) -> float:
    """P(idle chain started at ``y`` hits ``upper`` before ``lower``).

    Rates default to the reject-all-L chain (up ``mu (N - y)``, down
    ``N lambda_H``).  ``up_rate``/``down_rate`` override them with a constant
    or a callable of the level.  Solves the harmonic equations on the
    interior as a banded system.
    """
    if not lower <= y <= upper:
        raise ValueError(f"need lower <= y <= upper, got {lower}, {y}, {upper}")
    if y == upper:
        return 1.0
    if y == lower:
        return 0.0
    levels = np.arange(lower + 1, upper)
    up = _rates(up_rate, levels, lambda v: params.mu * (params.N - v))
    down = _rates(down_rate, levels, lambda v: np.full(v.shape, params.N * params.lambda_H))
    n = levels.size
    # (u + d) h_k - u h_{k+1} - d h_{k-1} = 0, with h_lower = 0, h_upper = 1.
    ab = np.zeros((3, n))
    ab[0, 1:] = -up[:-1]
    ab[1, :] = up + down
    ab[2, :-1] = -down[1:]
    rhs = np.zeros(n)
    rhs[-1] = up[-1]
    h = linalg.solve_banded((1, 1), ab, rhs)
    return float(h[y - lower - 1])


def _rates(spec, levels, default):
    if spec is None:
        return np.asarray(default(levels), dtype=float)
    if callable(spec):
        return np.asarray([spec(int(v)) for v in levels], dtype=float)
    return np.full(levels.shape, float(spec))


def transient_absorption(params: ModelParams, y: int, w: float, absorbing=(0, 1),
                         tol: float = 1e-10, max_steps: int = 10**7) -> float:
    """P(reject-all-L idle chain from ``y`` enters ``absorbing`` by time ``w``).

    Uniformization: with ``q`` the largest exit rate, the answer is
    ``sum_k Poisson(k; q w) (e_y P^k)[absorbed]``; the sum is cut where the
    Poisson tail drops below ``tol``.
    """
    absorbing = sorted(set(int(a) for a in absorbing))
    if y in absorbing:
        return 1.0
    if not w > 0:
        return 0.0
    Q = generator_matrix(idle_chain(params))
    for a in absorbing:
        Q[a, :] = 0.0
    q = float(np.max(-np.diag(Q)))
    qw = q * w
    K = int(stats.poisson.isf(tol, qw)) + 1
    if K > max_steps:
        raise ResourceLimitError(f"uniformization needs {K} steps (> {max_steps})")
    P = np.eye(Q.shape[0]) + Q / q
    weights = stats.poisson.pmf(np.arange(K + 1), qw)
    v = np.zeros(Q.shape[0])
    v[y] = 1.0
    total = 0.0
    for k in range(K + 1):
        total += weights[k] * v[absorbing].sum()
        v = v @ P
    return float(min(max(total, 0.0), 1.0))


def walk_ruin_prob(p_up: float, y: int, a: int, b: int) -> float:
    """P(simple random walk from ``y`` with up-probability ``p_up`` reaches ``b`` before ``a``)."""
    if not a <= y <= b:
        raise ValueError(f"need a <= y <= b, got {a}, {y}, {b}")
    if not 0 < p_up < 1:
        raise ValueError(f"p_up must lie in (0, 1), got {p_up}")
    if a == b:
        return 1.0
    if p_up == 0.5:
        return (y - a) / (b - a)
    rho = (1 - p_up) / p_up
    return (1 - rho ** (y - a)) / (1 - rho ** (b - a))
