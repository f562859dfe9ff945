"""Exact Gaussian-process regression with an anisotropic Matérn 3/2 kernel.

All objects are immutable: :func:`update` returns a new :class:`GPState`
whose Cholesky factor is extended by one row instead of being recomputed.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist

from .core import Dataset, NumericalError, RngSeed, UsageError, as_seed

log = logging.getLogger(__name__)

SQRT3 = np.sqrt(3.0)
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class HyperparameterFitWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class KernelParams:
    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float = 1e-8

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        if not self.signal_variance > 0:
            raise UsageError("signal_variance must be > 0")
        if np.any(ls <= 0):
            raise UsageError("lengthscales must be > 0")
        if not self.noise_variance >= 0:
            raise UsageError("noise_variance must be >= 0")

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def to_dict(self) -> dict:
        return {
            "signal_variance": float(self.signal_variance),
            "lengthscales": self.lengthscales.tolist(),
            "noise_variance": float(self.noise_variance),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelParams":
        return cls(d["signal_variance"], np.asarray(d["lengthscales"]), d["noise_variance"])


def _scaled_distance(X1, X2, lengthscales):
    return cdist(np.atleast_2d(X1) / lengthscales, np.atleast_2d(X2) / lengthscales)


def matern32_matrix(X1, X2, k: KernelParams) -> np.ndarray:
    """Cross-covariance matrix between the rows of ``X1`` and ``X2``."""
    r = _scaled_distance(X1, X2, k.lengthscales)
    return k.signal_variance * (1 + SQRT3 * r) * np.exp(-SQRT3 * r)


def matern32(p, q, k: KernelParams) -> float:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if p.shape != q.shape or p.shape != (k.dim,):
        raise UsageError(f"shape mismatch: {p.shape}, {q.shape}, kernel dim {k.dim}")
    r = np.sqrt(np.sum(((p - q) / k.lengthscales) ** 2))
    return float(k.signal_variance * (1 + SQRT3 * r) * np.exp(-SQRT3 * r))


def _factorize(K: np.ndarray) -> tuple[np.ndarray, float]:
    scale = max(float(np.mean(np.diag(K))), 1e-300) if K.size else 1.0
    for jitter in JITTER_LADDER:
        try:
            L = linalg.cholesky(K + jitter * scale * np.eye(K.shape[0]), lower=True)
        except linalg.LinAlgError:
            continue
        if jitter:
            log.debug("cholesky needed jitter %.1e", jitter)
        return L, jitter * scale
    raise NumericalError("covariance matrix not positive definite even with 1e-6 relative jitter")


@dataclass(frozen=True)
class GPState:
    """Kernel, data and the Cholesky factor of ``K + (noise + jitter) I``."""

    kernel: KernelParams
    data: Dataset
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0

    @classmethod
    def build(cls, kernel: KernelParams, data: Dataset) -> "GPState":
        if len(data) and data.dim != kernel.dim:
            raise UsageError(f"data dimension {data.dim} != kernel dimension {kernel.dim}")
        n = len(data)
        if n == 0:
            return cls(kernel, data, np.zeros((0, 0)), np.zeros(0), 0.0)
        K = matern32_matrix(data.X, data.X, kernel) + kernel.noise_variance * np.eye(n)
        L, jitter = _factorize(K)
        alpha = linalg.cho_solve((L, True), data.y)
        return cls(kernel, data, L, alpha, jitter)

    @classmethod
    def prior(cls, kernel: KernelParams) -> "GPState":
        return cls.build(kernel, Dataset.empty(kernel.dim))

    def predict(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized posterior mean and variance at the rows of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        prior_var = np.full(X.shape[0], self.kernel.signal_variance)
        if len(self.data) == 0:
            return np.zeros(X.shape[0]), prior_var
        Ks = matern32_matrix(X, self.data.X, self.kernel)
        mean = Ks @ self.alpha
        v = linalg.solve_triangular(self.chol, Ks.T, lower=True)
        var = prior_var - np.sum(v**2, axis=0)
        neg = var < 0
        if np.any(neg):
            log.debug("clamped negative posterior variance (min %.3e)", var[neg].min())
            var = np.where(neg, 0.0, var)
        return mean, var

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(),
            "X": self.data.X.tolist(),
            "y": self.data.y.tolist(),
            "jitter": self.jitter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GPState":
        kernel = KernelParams.from_dict(d["kernel"])
        X = np.asarray(d["X"], dtype=float).reshape(-1, kernel.dim)
        return cls.build(kernel, Dataset(X, np.asarray(d["y"], dtype=float)))


def posterior(gp: GPState, p) -> tuple[float, float]:
    mean, var = gp.predict(np.atleast_1d(np.asarray(p, dtype=float))[None, :])
    return float(mean[0]), float(var[0])


def update(gp: GPState, p, d: float) -> GPState:
    """Condition on one more observation by appending a row to the Cholesky factor."""
    if not np.isfinite(d):
        raise UsageError(f"observation must be finite, got {d}")
    data = gp.data.append(p, d) if len(gp.data) else Dataset(np.atleast_2d(np.asarray(p, float)), [d])
    if data.dim != gp.kernel.dim:
        raise UsageError(f"parameter dimension {data.dim} != kernel dimension {gp.kernel.dim}")
    n = len(gp.data)
    if n == 0:
        return GPState.build(gp.kernel, data)
    x = data.X[-1:]
    k_new = matern32_matrix(gp.data.X, x, gp.kernel)[:, 0]
    c = gp.kernel.signal_variance + gp.kernel.noise_variance + gp.jitter
    l = linalg.solve_triangular(gp.chol, k_new, lower=True)
    pivot = c - l @ l
    if pivot <= 1e-12 * c:
        return GPState.build(gp.kernel, data)
    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = gp.chol
    L[n, :n] = l
    L[n, n] = np.sqrt(pivot)
    alpha = linalg.cho_solve((L, True), data.y)
    return GPState(gp.kernel, data, L, alpha, gp.jitter)


def log_marginal_likelihood(data: Dataset, k: KernelParams) -> float:
    if len(data) < 1:
        raise UsageError("log marginal likelihood needs at least one observation")
    return _lml_and_grad(data, k, grad=False)[0]


def _lml_and_grad(data: Dataset, k: KernelParams, grad: bool = True):
    X, y = data.X, data.y
    n = len(y)
    r = _scaled_distance(X, X, k.lengthscales)
    e = np.exp(-SQRT3 * r)
    Kf = k.signal_variance * (1 + SQRT3 * r) * e
    K = Kf + k.noise_variance * np.eye(n)
    try:
        L = linalg.cholesky(K, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("K + noise I is not positive definite") from exc
    alpha = linalg.cho_solve((L, True), y)
    lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)
    if not grad:
        return lml, None
    W = np.outer(alpha, alpha) - linalg.cho_solve((L, True), np.eye(n))
    g = np.empty(k.dim + 2)
    g[0] = 0.5 * np.sum(W * Kf)
    for i in range(k.dim):
        diff = (X[:, i, None] - X[None, :, i]) / k.lengthscales[i]
        dK = 3.0 * k.signal_variance * e * diff**2
        g[1 + i] = 0.5 * np.sum(W * dK)
    g[-1] = 0.5 * k.noise_variance * np.trace(W)
    return lml, g


@dataclass(frozen=True)
class HyperBounds:
    """Natural-log boxes for each hyperparameter (one lengthscale box shared by all axes)."""

    log_signal_variance: tuple[float, float] = (np.log(1e-2), np.log(1e1))
    log_lengthscale: tuple[float, float] = (np.log(1e-2), np.log(0.5))
    log_noise_variance: tuple[float, float] = (np.log(1e-8), np.log(1e-4))

    def box(self, dim: int) -> np.ndarray:
        return np.array([self.log_signal_variance] + [self.log_lengthscale] * dim + [self.log_noise_variance])


def _unpack(theta, dim) -> KernelParams:
    return KernelParams(float(np.exp(theta[0])), np.exp(theta[1:1 + dim]), float(np.exp(theta[-1])))


def _pack(k: KernelParams) -> np.ndarray:
    return np.concatenate([[np.log(k.signal_variance)], np.log(k.lengthscales), [np.log(k.noise_variance)]])


def fit_hyperparams(data: Dataset, bounds: HyperBounds | None = None, restarts: int = 5,
                    seed: RngSeed | int = 0, initial: KernelParams | None = None) -> KernelParams:
    """Maximize the log marginal likelihood with multistart L-BFGS-B in log space.

    The first start is ``initial`` (if given, clipped into the bounds), the
    remaining starts are uniform in the log box. If every start fails
    numerically the box center is returned and a
    :class:`HyperparameterFitWarning` is emitted.
    """
    if len(data) < 2:
        raise UsageError("hyperparameter fitting needs at least two observations")
    bounds = bounds or HyperBounds()
    box = bounds.box(data.dim)
    rng = as_seed(seed).generator()
    starts = [] if initial is None else [np.clip(_pack(initial), box[:, 0], box[:, 1])]
    while len(starts) < max(restarts, 1):
        starts.append(box[:, 0] + rng.random(len(box)) * (box[:, 1] - box[:, 0]))

    def objective(theta):
        try:
            lml, g = _lml_and_grad(data, _unpack(theta, data.dim))
        except NumericalError:
            return 1e25, np.zeros_like(theta)
        return -lml, -g

    best_theta, best_val = None, np.inf
    for theta0 in starts:
        val0 = objective(theta0)[0]
        if val0 < best_val:
            best_theta, best_val = theta0, val0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = optimize.minimize(objective, theta0, jac=True, method="L-BFGS-B", bounds=box,
                                    options={"maxiter": 200})
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = np.clip(res.x, box[:, 0], box[:, 1]), res.fun

    if best_theta is None or best_val >= 1e25:
        warnings.warn("all hyperparameter restarts failed; using box center", HyperparameterFitWarning)
        return _unpack(box.mean(axis=1), data.dim)
    return _unpack(best_theta, data.dim)
