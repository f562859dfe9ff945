"""Convergence bound for GP-UCB with a Matérn 3/2 kernel and the validation certificate built on it."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import UsageError


@dataclass(frozen=True)
class BoundParams:
    C: float = 1.0
    dim: int = 1
    epsilon: float = 0.05

    def __post_init__(self):
        if not self.C > 0:
            raise UsageError("C must be > 0")
        if self.dim < 1:
            raise UsageError("dim must be >= 1")
        if not 0 < self.epsilon < 1:
            raise UsageError("epsilon must lie in (0, 1)")


def bound_r_n(bp: BoundParams, n: int) -> float:
    """``C * sqrt(dim / n**(3 / (3 + dim (dim + 1))))``."""
    if n < 1:
        raise UsageError("n must be >= 1")
    exponent = 3.0 / (3.0 + bp.dim * (bp.dim + 1))
    return bp.C * math.sqrt(bp.dim / n**exponent)


class Verdict(str, enum.Enum):
    VALIDATED = "validated"
    NOT_VALIDATED = "not-validated"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class Certificate:
    d_hat: float
    n: int
    r_n: float
    tau: float
    epsilon: float
    C: float
    verdict: Verdict

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        d["confidence"] = 1.0 - self.epsilon
        return d


def check_certificate(d_hat: float, n: int, tau: float, bp: BoundParams) -> Certificate:
    """Validated if ``d_hat < tau - r_n``; not validated once ``d_hat >= tau``; otherwise inconclusive."""
    r = bound_r_n(bp, n)
    if d_hat < tau - r:
        verdict = Verdict.VALIDATED
    elif d_hat >= tau:
        verdict = Verdict.NOT_VALIDATED
    else:
        verdict = Verdict.INCONCLUSIVE
    return Certificate(float(d_hat), int(n), r, float(tau), bp.epsilon, bp.C, verdict)


def cumulative_regret(distances: Sequence[float], d_star: float) -> float:
    """Sum of ``d_star - d_i``; ``d_star`` must upper-bound every observation."""
    d = np.asarray(getattr(distances, "distances", distances), dtype=float)
    if d.size and np.max(d) > d_star:
        raise UsageError(f"d_star={d_star} is below an observed distance {np.max(d)}")
    return float(np.sum(d_star - d))


def calibrate_C(pilot_runs: Sequence[tuple[float, Sequence[float]]], dim: int, epsilon: float) -> float:
    """Smallest ``C`` such that at most a fraction ``epsilon`` of pilot runs violate the bound.

    Each pilot run is ``(d_star, distances)`` with ``d_star`` from an oracle.
    A run needs ``C >= max_n (d_star - running_max_n) / r_n(C=1)``; the
    ``1 - epsilon`` empirical quantile of those requirements is returned.
    """
    unit = BoundParams(1.0, dim, epsilon)
    needed = []
    for d_star, dists in pilot_runs:
        best = np.maximum.accumulate(np.asarray(dists, dtype=float))
        ratios = [(d_star - b) / bound_r_n(unit, n) for n, b in enumerate(best, start=1)]
        needed.append(max(max(ratios), 0.0))
    if not needed:
        raise UsageError("need at least one pilot run")
    return float(max(np.quantile(needed, 1.0 - epsilon, method="higher"), 1e-12))
