"""Random-sampling estimators of the maximum distance: scenario (SC) and sampling-and-discarding (SD)."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .bo import EVALUATION_FAILURES, EvaluationLog
from .core import ParamSpace, RngSeed, UsageError, as_seed, sample_uniform

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SdConfig:
    discard_k: int = 5
    epsilon: float = 0.1
    confidence_beta: float = 0.05

    def __post_init__(self):
        if self.discard_k < 0:
            raise UsageError("discard_k must be >= 0")
        if not (0 < self.epsilon < 1 and 0 < self.confidence_beta < 1):
            raise UsageError("epsilon and confidence_beta must lie in (0, 1)")


def _split(evals) -> tuple[np.ndarray, list]:
    evals = list(evals)
    if not evals:
        raise UsageError("need at least one evaluation")
    return np.array([float(d) for _, d in evals]), [p for p, _ in evals]


def scenario_max(evals: Sequence[tuple]) -> tuple[float, np.ndarray]:
    """Largest observed distance and its parameter (first index wins ties)."""
    d, ps = _split(evals)
    i = int(np.argmax(d))
    return float(d[i]), ps[i]


def sd_max(evals: Sequence[tuple], cfg: SdConfig) -> tuple[float, np.ndarray]:
    """Maximum after discarding the ``discard_k`` largest distances."""
    d, ps = _split(evals)
    if len(d) <= cfg.discard_k:
        raise UsageError(f"need more than {cfg.discard_k} evaluations, got {len(d)}")
    order = np.argsort(-d, kind="stable")
    i = int(order[cfg.discard_k])
    return float(d[i]), ps[i]


def sc_sample_size(epsilon: float, confidence_beta: float) -> int:
    """``ceil(ln(1/beta) / eps)`` -- the scenario bound with its constant set to one."""
    if not (0 < epsilon < 1 and 0 < confidence_beta < 1):
        raise UsageError("epsilon and confidence_beta must lie in (0, 1)")
    # guard against ceil() overshooting on values that are integers up to rounding
    return max(1, math.ceil(math.log(1.0 / confidence_beta) / epsilon - 1e-9))


def sd_log_tail(N: int, k: int, epsilon: float) -> float:
    """``log sum_{i<k} C(N, i) eps^i (1 - eps)^(N - i)``; ``-inf`` for ``k = 0``."""
    if k <= 0:
        return -math.inf
    i = np.arange(min(k, N + 1))
    terms = (gammaln(N + 1) - gammaln(i + 1) - gammaln(N - i + 1)
             + i * math.log(epsilon) + (N - i) * math.log1p(-epsilon))
    return float(logsumexp(terms))


def sd_feasible(N: int, cfg: SdConfig) -> bool:
    if N < 1:
        raise UsageError("N must be >= 1")
    return sd_log_tail(N, cfg.discard_k, cfg.epsilon) <= math.log(cfg.confidence_beta)


def sd_min_samples(cfg: SdConfig, cap: int = 10**7) -> int:
    """Smallest feasible ``N`` (the tail is monotone in ``N``, so bisection applies)."""
    lo, hi = max(1, cfg.discard_k), max(1, cfg.discard_k)
    while not sd_feasible(hi, cfg):
        lo, hi = hi, hi * 2
        if hi > cap:
            raise UsageError("no feasible sample size below cap")
    while lo < hi:
        mid = (lo + hi) // 2
        if sd_feasible(mid, cfg):
            hi = mid
        else:
            lo = mid + 1
    return hi


def random_search(problem: Callable, space: ParamSpace, n: int, seed: RngSeed | int,
                  method: str = "random") -> EvaluationLog:
    """Evaluate ``n`` uniform samples through the same pipeline as the BO loop.

    Draws come from the ``init`` child stream, so the first points coincide
    with the BO initialization for the same seed. Failed evaluations are
    replaced by further draws from a separate stream.
    """
    seed = as_seed(seed)
    trace = EvaluationLog(method, space.dim)
    points = iter(sample_uniform(space, n, seed.child("init")))
    extra = iter(sample_uniform(space, 10 * n + 10, seed.child("resample")))
    while trace.n_success < n:
        p = next(points, None)
        if p is None:
            p = next(extra, None)
            if p is None:
                break
        t0 = time.perf_counter()
        try:
            if hasattr(problem, "evaluate"):
                ev = problem.evaluate(p)
                d, checksum = ev.distance, ev.checksum
            else:
                d, checksum = float(problem(p)), ""
        except EVALUATION_FAILURES as exc:
            log.warning("evaluation failed at p=%s: %s", p, exc)
            trace.add_failure(p, "random", type(exc).__name__)
            continue
        trace.add(p, d, source="random", wall_ms=(time.perf_counter() - t0) * 1e3, checksum=checksum)
    return trace


def running_sd(trace: EvaluationLog, cfg: SdConfig) -> np.ndarray:
    """SD estimate after each evaluation; NaN until more than ``discard_k`` samples exist."""
    d = trace.distances
    out = np.full(d.size, np.nan)
    for n in range(cfg.discard_k + 1, d.size + 1):
        out[n - 1] = np.sort(d[:n])[::-1][cfg.discard_k]
    return out
