"""Model primitives shared by the engine, lookahead oracles and analytics."""
from __future__ import annotations

import enum
import math
import operator
from dataclasses import dataclass, replace

__all__ = [
    "JobClass",
    "ModelParams",
    "InvalidParams",
    "Decision",
    "REFERENCE",
    "reference_params",
]


class InvalidParams(ValueError):
    """Raised when parameters violate the overload or reward ordering."""


class JobClass(enum.IntEnum):
    H = 0
    L = 1


class Decision(enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"

    @classmethod
    def of(cls, accept: bool) -> "Decision":
        return cls.ACCEPT if accept else cls.REJECT


@dataclass(frozen=True)
class ModelParams:
    """N-server overloaded loss network.

    Rates are per server, in 1/hour: class ``i`` arrives at rate
    ``lambda_i * N`` and every job is served at rate ``mu``.
    """

    N: int
    lambda_H: float
    lambda_L: float
    mu: float
    r_H: float
    r_L: float

    def __post_init__(self):
        try:
            object.__setattr__(self, "N", operator.index(self.N))
        except TypeError:
            raise InvalidParams(f"N must be an integer, got {self.N!r}") from None
        if self.N < 1:
            raise InvalidParams(f"N must be a positive integer, got {self.N!r}")
        if min(self.lambda_H, self.lambda_L, self.mu) <= 0:
            raise InvalidParams("rates must be positive")
        if not (self.lambda_H < self.mu < self.lambda_H + self.lambda_L):
            raise InvalidParams(
                "overload condition violated: need lambda_H < mu < lambda_H + lambda_L, "
                f"got lambda_H={self.lambda_H}, lambda_L={self.lambda_L}, mu={self.mu}"
            )
        # r_L == 0 is admitted as the degenerate reward case.
        if not (self.r_H > self.r_L >= 0):
            raise InvalidParams(f"need r_H > r_L >= 0, got r_H={self.r_H}, r_L={self.r_L}")

    @property
    def sqrt_level(self) -> int:
        """Integer floor of sqrt(N), the PFI upper race level."""
        return math.isqrt(self.N)

    @property
    def event_rate(self) -> float:
        """Upper bound on the total event rate, N * (lambda_H + lambda_L + mu)."""
        return self.N * (self.lambda_H + self.lambda_L + self.mu)

    def with_n(self, N: int) -> "ModelParams":
        return replace(self, N=int(N))


def reference_params(N: int) -> ModelParams:
    """lambda_H=0.7, lambda_L=0.8, mu=1, r_H=2, r_L=1 at the given N."""
    return ModelParams(N=int(N), lambda_H=0.7, lambda_L=0.8, mu=1.0, r_H=2.0, r_L=1.0)


REFERENCE = reference_params(100)
