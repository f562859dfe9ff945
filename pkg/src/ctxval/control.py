"""Controller representations and synthesis on a (learned) model.

Three controller kinds share one calling convention, ``u = ctrl(x, t)``:

* :class:`LinearFeedback` -- ``K (x - x_ref)``
* :class:`TimeVaryingAffine` -- ``k_t + K_t (x - xref_t)``
* :class:`OpenLoopSequence` -- ``u_t`` regardless of ``x``

Each has a content checksum so callers can prove that two closed loops were
driven by the same controller.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .core import UsageError, state_difference
from .dynamics import LinearModel


class SynthesisError(RuntimeError):
    pass


def _ro(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def _bounds(u_bounds):
    if u_bounds is None:
        return None
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=float)) for b in u_bounds)
    return _ro(lo), _ro(hi)


class Controller:
    kind: str = ""

    def _arrays(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def checksum(self) -> str:
        h = hashlib.sha256(self.kind.encode())
        for name, arr in self._arrays().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
        h.update(repr(tuple(self.angle_dims)).encode())
        return h.hexdigest()

    def _clip(self, u):
        if self.u_bounds is None:
            return u
        return np.clip(u, self.u_bounds[0], self.u_bounds[1])

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "angle_dims": list(self.angle_dims)}
        d.update({k: v.tolist() for k, v in self._arrays().items()})
        d["u_bounds"] = None if self.u_bounds is None else [b.tolist() for b in self.u_bounds]
        d["checksum"] = self.checksum()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True, eq=False)
class LinearFeedback(Controller):
    K: np.ndarray
    x_ref: np.ndarray
    angle_dims: tuple[int, ...] = ()
    u_bounds: tuple[np.ndarray, np.ndarray] | None = None
    kind = "linear_feedback"

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        x_ref = np.atleast_1d(np.asarray(self.x_ref, dtype=float))
        if K.shape[1] != x_ref.size:
            raise UsageError(f"gain shape {K.shape} incompatible with reference of size {x_ref.size}")
        object.__setattr__(self, "K", _ro(K))
        object.__setattr__(self, "x_ref", _ro(x_ref))
        object.__setattr__(self, "u_bounds", _bounds(self.u_bounds))

    def _arrays(self):
        arrays = {"K": self.K, "x_ref": self.x_ref}
        if self.u_bounds is not None:
            arrays.update(u_lower=self.u_bounds[0], u_upper=self.u_bounds[1])
        return arrays

    def __call__(self, x, t: int = 0) -> np.ndarray:
        return self._clip(self.K @ state_difference(x, self.x_ref, self.angle_dims))


def linear_feedback(K, x_final, angle_dims: Sequence[int] = (), u_bounds=None) -> LinearFeedback:
    return LinearFeedback(K, x_final, tuple(angle_dims), u_bounds)


@dataclass(frozen=True, eq=False)
class TimeVaryingAffine(Controller):
    """``u_t = k_t + K_t (x - xref_t)`` for ``t < H``; the last law is held afterwards."""

    K: np.ndarray
    k: np.ndarray
    x_ref: np.ndarray
    angle_dims: tuple[int, ...] = ()
    u_bounds: tuple[np.ndarray, np.ndarray] | None = None
    kind = "time_varying_affine"

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        k = np.asarray(self.k, dtype=float)
        x_ref = np.asarray(self.x_ref, dtype=float)
        if K.ndim != 3 or k.shape != K.shape[:2] or x_ref.shape[0] < K.shape[0] or x_ref.shape[1] != K.shape[2]:
            raise UsageError(f"inconsistent shapes K{K.shape} k{k.shape} x_ref{x_ref.shape}")
        object.__setattr__(self, "K", _ro(K))
        object.__setattr__(self, "k", _ro(k))
        object.__setattr__(self, "x_ref", _ro(x_ref[:K.shape[0]]))
        object.__setattr__(self, "u_bounds", _bounds(self.u_bounds))

    @property
    def horizon(self) -> int:
        return self.K.shape[0]

    def _arrays(self):
        arrays = {"K": self.K, "k": self.k, "x_ref": self.x_ref}
        if self.u_bounds is not None:
            arrays.update(u_lower=self.u_bounds[0], u_upper=self.u_bounds[1])
        return arrays

    def affine_terms(self) -> tuple[np.ndarray, np.ndarray]:
        """Gains and offsets of the equivalent law ``u_t = K_t x + c_t`` (no angle wrapping)."""
        c = self.k - np.einsum("tmn,tn->tm", self.K, self.x_ref)
        return self.K, c

    def __call__(self, x, t: int) -> np.ndarray:
        t = min(t, self.horizon - 1)
        return self._clip(self.k[t] + self.K[t] @ state_difference(x, self.x_ref[t], self.angle_dims))


@dataclass(frozen=True, eq=False)
class OpenLoopSequence(Controller):
    u: np.ndarray
    angle_dims: tuple[int, ...] = ()
    u_bounds: tuple[np.ndarray, np.ndarray] | None = None
    kind = "open_loop"

    def __post_init__(self):
        object.__setattr__(self, "u", _ro(np.atleast_2d(np.asarray(self.u, dtype=float))))
        object.__setattr__(self, "u_bounds", _bounds(self.u_bounds))

    def _arrays(self):
        return {"u": self.u}

    def __call__(self, x, t: int) -> np.ndarray:
        return self.u[min(t, len(self.u) - 1)]


def controller_from_dict(d: dict) -> Controller:
    kind = d["kind"]
    common = dict(angle_dims=tuple(d.get("angle_dims", ())),
                  u_bounds=None if d.get("u_bounds") is None else tuple(d["u_bounds"]))
    if kind == LinearFeedback.kind:
        return LinearFeedback(d["K"], d["x_ref"], **common)
    if kind == TimeVaryingAffine.kind:
        return TimeVaryingAffine(d["K"], d["k"], d["x_ref"], **common)
    if kind == OpenLoopSequence.kind:
        return OpenLoopSequence(d["u"], **common)
    raise UsageError(f"unknown controller kind {kind!r}")


@dataclass(frozen=True)
class QuadCost:
    """``sum_t (x_t - r_t)' Q (x_t - r_t) + u_t' R u_t`` plus the terminal term with ``Q_f``.

    ``reference`` is either one state or an ``(H+1, n)`` array.
    """

    Q: np.ndarray
    R: np.ndarray
    Q_f: np.ndarray
    reference: np.ndarray

    def __post_init__(self):
        Q, R, Qf = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (self.Q, self.R, self.Q_f))
        for name, M in (("Q", Q), ("R", R), ("Q_f", Qf)):
            if not np.allclose(M, M.T):
                raise UsageError(f"{name} must be symmetric")
        if np.min(np.linalg.eigvalsh(Q)) < -1e-12 or np.min(np.linalg.eigvalsh(Qf)) < -1e-12:
            raise UsageError("Q and Q_f must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(R)) <= 0:
            raise UsageError("R must be positive definite")
        object.__setattr__(self, "Q", _ro(Q))
        object.__setattr__(self, "R", _ro(R))
        object.__setattr__(self, "Q_f", _ro(Qf))
        object.__setattr__(self, "reference", _ro(np.asarray(self.reference, dtype=float)))

    def reference_at(self, t: int) -> np.ndarray:
        if self.reference.ndim == 1:
            return self.reference
        return self.reference[min(t, len(self.reference) - 1)]

    def references(self, horizon: int) -> np.ndarray:
        return np.array([self.reference_at(t) for t in range(horizon + 1)])

    def evaluate(self, states, inputs) -> float:
        states = np.asarray(states, dtype=float)
        inputs = np.asarray(inputs, dtype=float).reshape(len(states) - 1, -1)
        err = states - self.references(len(states) - 1)
        stage = np.einsum("ti,ij,tj->", err[:-1], self.Q, err[:-1]) + np.einsum("ti,ij,tj->", inputs, self.R, inputs)
        return float(stage + err[-1] @ self.Q_f @ err[-1])


def rollout_cost(step: Callable, cost: QuadCost, x0, controller, horizon: int) -> float:
    xs = [np.asarray(x0, dtype=float)]
    us = []
    for t in range(horizon):
        u = np.atleast_1d(controller(xs[-1], t))
        us.append(u)
        xs.append(step(xs[-1], u))
    return cost.evaluate(np.array(xs), np.array(us))


def lqr_tracking(model: LinearModel, cost: QuadCost, horizon: int,
                 angle_dims: Sequence[int] = (), u_bounds=None) -> TimeVaryingAffine:
    """Finite-horizon LQR toward a (possibly time-varying) reference.

    The reference enters through an augmented state ``[x; 1]`` so the
    backward Riccati recursion produces gains ``[K_t, kappa_t]`` with
    ``u_t = K_t x + kappa_t``.
    """
    if horizon < 1:
        raise UsageError("horizon must be >= 1")
    A, B = model.A, model.B
    n, m = model.state_dim, model.input_dim
    if cost.Q.shape != (n, n) or cost.Q_f.shape != (n, n) or cost.R.shape != (m, m):
        raise UsageError("cost weights do not match model dimensions")
    refs = cost.references(horizon)

    Aa = np.zeros((n + 1, n + 1))
    Aa[:n, :n] = A
    Aa[n, n] = 1.0
    Ba = np.vstack([B, np.zeros((1, m))])

    def augmented_weight(W, r):
        Wa = np.zeros((n + 1, n + 1))
        Wa[:n, :n] = W
        Wa[:n, n] = Wa[n, :n] = -W @ r
        Wa[n, n] = r @ W @ r
        return Wa

    P = augmented_weight(cost.Q_f, refs[horizon])
    K = np.empty((horizon, m, n))
    kappa = np.empty((horizon, m))
    for t in range(horizon - 1, -1, -1):
        S = cost.R + Ba.T @ P @ Ba
        try:
            Ka = -linalg.solve(S, Ba.T @ P @ Aa, assume_a="pos")
        except linalg.LinAlgError as exc:
            raise SynthesisError(f"R + B'PB singular at step {t}") from exc
        K[t], kappa[t] = Ka[:, :n], Ka[:, n]
        P = augmented_weight(cost.Q, refs[t]) + Aa.T @ P @ (Aa + Ba @ Ka)
        P = 0.5 * (P + P.T)
    k = kappa + np.einsum("tmn,tn->tm", K, refs[:horizon])
    return TimeVaryingAffine(K, k, refs[:horizon], tuple(angle_dims), u_bounds)


def finite_difference_jacobians(step: Callable, x, u, eps: float = 1e-5):
    """Central-difference Jacobians of ``step`` w.r.t. state and input."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n, m = x.size, u.size
    A = np.empty((n, n))
    B = np.empty((n, m))
    for i in range(n):
        dx = np.zeros(n)
        dx[i] = eps
        A[:, i] = (step(x + dx, u) - step(x - dx, u)) / (2 * eps)
    for j in range(m):
        du = np.zeros(m)
        du[j] = eps
        B[:, j] = (step(x, u + du) - step(x, u - du)) / (2 * eps)
    return A, B


@dataclass(frozen=True)
class RegSchedule:
    """Levenberg-Marquardt style regularization on ``Q_uu``."""

    initial: float = 0.0
    minimum: float = 1e-6
    factor: float = 10.0
    maximum: float = 1e10


@dataclass
class ILQRResult:
    controller: TimeVaryingAffine
    states: np.ndarray
    inputs: np.ndarray
    cost: float
    cost_history: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def _backward_pass(As, Bs, xs, us, cost: QuadCost, refs, mu):
    H = len(us)
    n, m = xs.shape[1], us.shape[1]
    Vx = 2 * cost.Q_f @ (xs[H] - refs[H])
    Vxx = 2 * cost.Q_f
    K = np.empty((H, m, n))
    k = np.empty((H, m))
    dV = np.zeros(2)
    for t in range(H - 1, -1, -1):
        A, B = As[t], Bs[t]
        Qx = 2 * cost.Q @ (xs[t] - refs[t]) + A.T @ Vx
        Qu = 2 * cost.R @ us[t] + B.T @ Vx
        Qxx = 2 * cost.Q + A.T @ Vxx @ A
        Quu = 2 * cost.R + B.T @ Vxx @ B + mu * np.eye(m)
        Qux = B.T @ Vxx @ A
        try:
            np.linalg.cholesky(Quu)
        except np.linalg.LinAlgError:
            return None
        sol = np.linalg.solve(Quu, np.column_stack([Qu, Qux]))
        k[t] = -sol[:, 0]
        K[t] = -sol[:, 1:]
        dV += np.array([k[t] @ Qu, 0.5 * k[t] @ Quu @ k[t]])
        Vx = Qx + K[t].T @ Quu @ k[t] + K[t].T @ Qu + Qux.T @ k[t]
        Vxx = Qxx + K[t].T @ Quu @ K[t] + K[t].T @ Qux + Qux.T @ K[t]
        Vxx = 0.5 * (Vxx + Vxx.T)
    return K, k, dV


def ilqr(model_step: Callable, cost: QuadCost, x0, horizon: int, iters: int = 100,
         reg: RegSchedule = RegSchedule(), u_init=None, tol: float = 1e-6, fd_eps: float = 1e-5,
         max_line_search: int = 20, angle_dims: Sequence[int] = (), u_bounds=None) -> ILQRResult:
    """Iterative LQR with central-difference linearization and a backtracking line search.

    The returned controller is ``u_t = u_bar_t + K_t (x - x_bar_t)`` around the
    final nominal trajectory, with gains from a backward pass at that
    trajectory.
    """
    if iters < 1:
        raise UsageError("iters must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    m = cost.R.shape[0]
    us = np.zeros((horizon, m)) if u_init is None else np.array(u_init, dtype=float).reshape(horizon, m)
    refs = cost.references(horizon)

    def simulate(us_):
        xs_ = np.empty((horizon + 1, x0.size))
        xs_[0] = x0
        for t in range(horizon):
            xs_[t + 1] = model_step(xs_[t], us_[t])
        return xs_

    def linearize(xs_, us_):
        jac = [finite_difference_jacobians(model_step, xs_[t], us_[t], fd_eps) for t in range(horizon)]
        return [a for a, _ in jac], [b for _, b in jac]

    xs = simulate(us)
    J = cost.evaluate(xs, us)
    history = [J]
    mu = reg.initial
    converged = False
    final_bp = None
    it = 0
    while it < iters:
        it += 1
        As, Bs = linearize(xs, us)
        bp = _backward_pass(As, Bs, xs, us, cost, refs, mu)
        while bp is None:
            mu = max(reg.minimum, mu * reg.factor)
            if mu > reg.maximum:
                raise SynthesisError("Q_uu not positive definite at maximum regularization")
            bp = _backward_pass(As, Bs, xs, us, cost, refs, mu)
        K, k, dV = bp
        final_bp = bp
        expected = -(dV[0] + dV[1])
        if expected <= tol * max(abs(J), 1e-12):
            converged = True
            break
        accepted = False
        alpha = 1.0
        for _ in range(max_line_search):
            xn = np.empty_like(xs)
            un = np.empty_like(us)
            xn[0] = x0
            for t in range(horizon):
                un[t] = us[t] + alpha * k[t] + K[t] @ (xn[t] - xs[t])
                xn[t + 1] = model_step(xn[t], un[t])
            if np.all(np.isfinite(xn)):
                Jn = cost.evaluate(xn, un)
                if Jn < J:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            break
        rel = (J - Jn) / max(abs(J), 1e-12)
        xs, us, J = xn, un, Jn
        final_bp = None
        history.append(J)
        mu = reg.initial if mu <= reg.minimum else mu / reg.factor
        if rel < tol:
            converged = True
            break

    bp = final_bp
    if bp is None:
        As, Bs = linearize(xs, us)
        bp = _backward_pass(As, Bs, xs, us, cost, refs, mu)
    mu_final = mu
    while bp is None:
        mu_final = max(reg.minimum, mu_final * reg.factor)
        if mu_final > reg.maximum:
            raise SynthesisError("Q_uu not positive definite at maximum regularization")
        bp = _backward_pass(As, Bs, xs, us, cost, refs, mu_final)
    ctrl = TimeVaryingAffine(bp[0], us, xs[:horizon], tuple(angle_dims), u_bounds)
    return ILQRResult(ctrl, xs, us, J, history, converged, it)


def open_loop_from_params(knots, segments: int, horizon: int, u_bounds=None) -> OpenLoopSequence:
    """Piecewise-constant input sequence: ``segments`` equal-length blocks over ``horizon`` steps."""
    knots = np.asarray(knots, dtype=float).ravel()
    if segments < 1 or knots.size % segments:
        raise UsageError(f"{knots.size} knots cannot be split into {segments} segments")
    values = knots.reshape(segments, -1)
    block = np.minimum((np.arange(horizon) * segments) // max(horizon, 1), segments - 1)
    u = values[block]
    if u_bounds is not None:
        u = np.clip(u, np.asarray(u_bounds[0], dtype=float), np.asarray(u_bounds[1], dtype=float))
    return OpenLoopSequence(u.reshape(horizon, -1), u_bounds=u_bounds)
