"""GP-UCB active sampling for the task of maximum model/system distance."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import Dataset, NumericalError, ParamSpace, RngSeed, UsageError, as_seed, sample_uniform
from .control import SynthesisError
from .dynamics import RolloutError
from .gp import GPState, HyperBounds, KernelParams, fit_hyperparams, update

log = logging.getLogger(__name__)

EVALUATION_FAILURES = (SynthesisError, RolloutError, NumericalError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class AcquisitionConfig:
    ucb_beta: float = 2.0
    acq_restarts: int | None = None  # None -> 10 * dim
    acq_local_steps: int = 60
    acq_candidates: int = 1000

    def __post_init__(self):
        if not self.ucb_beta > 0:
            raise UsageError("ucb_beta must be > 0")

    def restarts_for(self, dim: int) -> int:
        return self.acq_restarts if self.acq_restarts is not None else 10 * dim


@dataclass
class EvalRecord:
    iteration: int
    p: np.ndarray
    distance: float
    running_max: float
    acquisition: float = math.nan
    source: str = "random"
    failed: bool = False
    wall_ms: float = 0.0
    checksum: str = ""


@dataclass
class EvaluationLog:
    """Ordered evaluations of one campaign; shared by BO and the random-sampling baselines.

    Failed evaluations are kept (``failed=True``) but carry no distance and
    do not count as an iteration.
    """

    method: str
    dim: int
    records: list[EvalRecord] = field(default_factory=list)

    def add(self, p, distance: float, *, acquisition=math.nan, source="random", wall_ms=0.0,
            checksum="") -> EvalRecord:
        prev = self.running_max[-1] if self.n_success else -math.inf
        rec = EvalRecord(self.n_success + 1, np.array(p, dtype=float), float(distance),
                         float(max(prev, float(distance))), float(acquisition), source, False, wall_ms, checksum)
        self.records.append(rec)
        return rec

    def add_failure(self, p, source: str, reason: str = "") -> None:
        prev = self.running_max[-1] if self.n_success else math.nan
        self.records.append(EvalRecord(self.n_success, np.array(p, dtype=float), math.nan, prev,
                                       source=source, failed=True, checksum=reason))

    @property
    def successes(self) -> list[EvalRecord]:
        return [r for r in self.records if not r.failed]

    @property
    def n_success(self) -> int:
        return sum(not r.failed for r in self.records)

    @property
    def params(self) -> np.ndarray:
        return np.array([r.p for r in self.successes]).reshape(-1, self.dim)

    @property
    def distances(self) -> np.ndarray:
        return np.array([r.distance for r in self.successes])

    @property
    def running_max(self) -> np.ndarray:
        d = self.distances
        return np.maximum.accumulate(d) if d.size else d

    def best(self) -> tuple[float, np.ndarray]:
        d = self.distances
        i = int(np.argmax(d))
        return float(d[i]), self.params[i]

    def truncated(self, n: int) -> "EvaluationLog":
        """The log as it stood after ``n`` successful evaluations."""
        out = EvaluationLog(self.method, self.dim)
        for r in self.records:
            if not r.failed and r.iteration > n:
                break
            out.records.append(r)
        return out


BoTrace = EvaluationLog


def ucb(gp: GPState, p, cfg: AcquisitionConfig) -> float:
    mean, var = gp.predict(np.atleast_1d(np.asarray(p, dtype=float))[None, :])
    return float(mean[0] + math.sqrt(cfg.ucb_beta) * math.sqrt(var[0]))


def _ucb_batch(gp: GPState, X: np.ndarray, beta: float) -> np.ndarray:
    mean, var = gp.predict(X)
    return mean + math.sqrt(beta) * np.sqrt(var)


def maximize_acquisition(gp: GPState, space: ParamSpace, cfg: AcquisitionConfig,
                         seed: RngSeed | int) -> np.ndarray:
    """Random candidates, then vectorized compass search from the best ``restarts`` of them."""
    rng = as_seed(seed).generator()
    d = space.dim
    cands = space.lower + rng.random((cfg.acq_candidates, d)) * space.width
    if len(gp.data):
        inside = np.all((gp.data.X >= space.lower) & (gp.data.X <= space.upper), axis=1)
        cands = np.vstack([cands, gp.data.X[inside]])
    vals = _ucb_batch(gp, cands, cfg.ucb_beta)
    n_starts = min(cfg.restarts_for(d), len(cands))
    order = np.argsort(-vals, kind="stable")[:n_starts]
    X, f = cands[order].copy(), vals[order].copy()
    step = np.full(n_starts, 0.1)
    eye = np.eye(d)
    dirs = np.vstack([eye, -eye])
    for _ in range(cfg.acq_local_steps):
        active = step > 1e-7
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        nb = X[idx, None, :] + step[idx, None, None] * dirs[None] * space.width
        nb = np.clip(nb, space.lower, space.upper).reshape(-1, d)
        fv = _ucb_batch(gp, nb, cfg.ucb_beta).reshape(len(idx), 2 * d)
        j = np.argmax(fv, axis=1)
        best = fv[np.arange(len(idx)), j]
        improved = best > f[idx]
        moved = idx[improved]
        X[moved] = nb.reshape(len(idx), 2 * d, d)[improved, j[improved]]
        f[moved] = best[improved]
        step[idx[~improved]] *= 0.5
    return X[int(np.argmax(f))]


@dataclass
class _Standardizer:
    space: ParamSpace
    offset: float = 0.0
    scale: float = 1.0

    def fit(self, y: np.ndarray) -> None:
        self.offset = float(np.mean(y))
        sd = float(np.std(y))
        self.scale = sd if sd > 1e-12 * max(1.0, abs(self.offset)) else 1.0

    def dataset(self, X, y) -> Dataset:
        return Dataset(self.space.to_unit(X), (np.asarray(y) - self.offset) / self.scale)


def custom_validate(problem: Callable, space: ParamSpace, budget: int, n_init: int = 5,
                    cfg: AcquisitionConfig = AcquisitionConfig(), seed: RngSeed | int = 0, *,
                    refit_every: int = 1, hyper_bounds: HyperBounds | None = None,
                    hyper_restarts: int = 3, kernel_init: KernelParams | None = None,
                    init_points: np.ndarray | None = None,
                    callback: Callable[[EvalRecord], None] | None = None,
                    stop_when: Callable[[EvaluationLog], bool] | None = None) -> EvaluationLog:
    """Active search for the task of largest distance.

    ``problem`` is either a :class:`~ctxval.distances.ClosedLoopProblem`
    (anything with ``evaluate(p)`` returning an object with ``distance`` and
    ``checksum``) or a plain ``p -> distance`` callable.

    Tasks are mapped to the unit cube and distances standardized before the
    GP sees them; standardization constants are refreshed at each
    hyperparameter refit and held fixed in between so the incremental GP
    update stays exact. ``stop_when(trace)`` is checked before every BO step
    and ends the campaign early when it returns true.
    """
    if budget < 1 or n_init < 1:
        raise UsageError("budget and n_init must be >= 1")
    seed = as_seed(seed)
    n_init = min(n_init, budget)
    unit = ParamSpace(np.zeros(space.dim), np.ones(space.dim))
    trace = EvaluationLog("custom", space.dim)
    fallback = space.lower + seed.child("resample").generator().random((10 * budget + 10, space.dim)) * space.width
    fallback_iter = iter(fallback)
    max_failures = max(10, budget)

    def evaluate(p, source, acq=math.nan) -> bool:
        t0 = time.perf_counter()
        try:
            if hasattr(problem, "evaluate"):
                ev = problem.evaluate(p)
                d, checksum = ev.distance, ev.checksum
            else:
                d, checksum = float(problem(p)), ""
        except EVALUATION_FAILURES as exc:
            log.warning("evaluation failed at p=%s: %s", p, exc)
            trace.add_failure(p, source, type(exc).__name__)
            return False
        if not np.isfinite(d):
            trace.add_failure(p, source, "non-finite distance")
            return False
        rec = trace.add(p, d, acquisition=acq, source=source,
                        wall_ms=(time.perf_counter() - t0) * 1e3, checksum=checksum)
        if callback:
            callback(rec)
        return True

    def failures() -> int:
        return len(trace.records) - trace.n_success

    init = sample_uniform(space, n_init, seed.child("init")) if init_points is None else np.atleast_2d(init_points)[:n_init]
    for p in init:
        ok = evaluate(p, "init")
        while not ok and failures() < max_failures:
            ok = evaluate(next(fallback_iter), "init")
    if trace.n_success == 0:
        raise NumericalError("every initial evaluation failed")

    std = _Standardizer(space)
    kernel = kernel_init or KernelParams(1.0, np.full(space.dim, 0.2), 1e-6)
    gp = None
    bo_iter = 0
    while trace.n_success < budget and failures() < max_failures:
        if stop_when is not None and stop_when(trace):
            break
        X, y = trace.params, trace.distances
        if gp is None or bo_iter % refit_every == 0:
            std.fit(y)
            data = std.dataset(X, y)
            if len(data) >= 2:
                kernel = fit_hyperparams(data, hyper_bounds, hyper_restarts,
                                         seed.child("hyper").child(bo_iter), initial=kernel)
            gp = GPState.build(kernel, data)
        u = maximize_acquisition(gp, unit, cfg, seed.child("acq").child(bo_iter))
        if len(gp.data) and np.min(np.max(np.abs(gp.data.X - u), axis=1)) < 1e-9:
            jitter = seed.child("dup").child(bo_iter).generator().uniform(-1e-3, 1e-3, space.dim)
            u = np.clip(u + jitter, 0.0, 1.0)
        mean, var = gp.predict(u[None, :])
        acq = std.offset + std.scale * (mean[0] + math.sqrt(cfg.ucb_beta) * math.sqrt(var[0]))
        p = space.from_unit(u)
        bo_iter += 1
        if evaluate(p, "bo", acq):
            gp = update(gp, u, (trace.distances[-1] - std.offset) / std.scale)
        else:
            while not evaluate(next(fallback_iter), "random") and failures() < max_failures:
                pass
            gp = None
    return trace
