"""Plants and learned abstractions.

Every plant exposes ``step(x, u) -> x_next`` plus ``state_dim``,
``input_dim``, ``dt`` and ``angle_dims``; :func:`rollout` closes the loop
with any controller.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .core import RngSeed, Trajectory, UsageError, as_seed, wrap_angle


class RolloutError(RuntimeError):
    def __init__(self, step: int, message: str = "non-finite state"):
        super().__init__(f"{message} at step {step}")
        self.step = step


class RankDeficiencyWarning(RuntimeWarning):
    pass


class Plant(Protocol):
    state_dim: int
    input_dim: int
    dt: float
    angle_dims: tuple[int, ...]

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray: ...


def rk4(f, x, u, dt):
    k1 = f(x, u)
    k2 = f(x + 0.5 * dt * k1, u)
    k3 = f(x + 0.5 * dt * k2, u)
    k4 = f(x + dt * k3, u)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass(frozen=True)
class LinearModel:
    """Discrete-time ``x+ = A x + B u``."""

    A: np.ndarray
    B: np.ndarray
    dt: float = 1.0
    angle_dims: tuple[int, ...] = ()
    rank_deficient: bool = field(default=False, compare=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float)).copy()
        B = np.asarray(self.B, dtype=float).copy()
        if B.ndim < 2:
            B = B.reshape(A.shape[0], -1)
        if A.shape[0] != A.shape[1]:
            raise UsageError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise UsageError(f"B has {B.shape[0]} rows, A has {A.shape[0]}")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "angle_dims", tuple(self.angle_dims))

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]

    def step(self, x, u):
        return self.A @ x + self.B @ u

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))


@dataclass(frozen=True)
class PendulumParams:
    m: float = 1.0
    l: float = 1.0
    g: float = 9.81
    dt: float = 0.05

    def __post_init__(self):
        if min(self.m, self.l, self.g, self.dt) <= 0:
            raise UsageError("pendulum mass, length, gravity and dt must be positive")


def pendulum_rhs(x, u, params: PendulumParams):
    # theta measured from the upward vertical: (m l^2 / 3) theta'' = (m g l / 2) sin(theta) + u
    theta, omega = x
    inertia = params.m * params.l**2 / 3.0
    acc = (0.5 * params.m * params.g * params.l * np.sin(theta) + np.ravel(u)[0]) / inertia
    return np.array([omega, acc])


def pendulum_step(x, u, params: PendulumParams, wrap: bool = True) -> np.ndarray:
    f = lambda s, a: pendulum_rhs(s, a, params)
    nxt = rk4(f, np.asarray(x, dtype=float), u, params.dt)
    if wrap:
        nxt[0] = wrap_angle(nxt[0])
    return nxt


def pendulum_energy(x, params: PendulumParams) -> float:
    theta, omega = x
    return params.m * params.l**2 / 6.0 * omega**2 + 0.5 * params.m * params.g * params.l * np.cos(theta)


@dataclass(frozen=True)
class Pendulum:
    params: PendulumParams = PendulumParams()
    wrap: bool = True

    state_dim = 2
    input_dim = 1

    @property
    def dt(self) -> float:
        return self.params.dt

    @property
    def angle_dims(self) -> tuple[int, ...]:
        return (0,)

    def step(self, x, u):
        return pendulum_step(x, u, self.params, wrap=self.wrap)


def dubins_rhs(x, u):
    _, _, phi = x
    v, omega = u
    return np.array([v * np.cos(phi), v * np.sin(phi), omega])


def dubins_step(x, u, dt: float, wrap: bool = True) -> np.ndarray:
    nxt = rk4(lambda s, a: dubins_rhs(s, a), np.asarray(x, dtype=float), np.asarray(u, dtype=float), dt)
    if wrap:
        nxt[2] = wrap_angle(nxt[2])
    return nxt


@dataclass(frozen=True)
class DubinsCar:
    dt: float = 0.1
    wrap: bool = True

    state_dim = 3
    input_dim = 2

    @property
    def angle_dims(self) -> tuple[int, ...]:
        return (2,)

    def step(self, x, u):
        return dubins_step(x, u, self.dt, wrap=self.wrap)


def rollout(plant: Plant, x0, controller, horizon: int) -> Trajectory:
    """Run ``controller`` in closed loop with ``plant`` for ``horizon`` steps."""
    if horizon < 0:
        raise UsageError("horizon must be >= 0")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (plant.state_dim,):
        raise UsageError(f"x0 has shape {x.shape}, plant state dimension is {plant.state_dim}")
    if plant.angle_dims and getattr(plant, "wrap", False):
        idx = list(plant.angle_dims)
        x[idx] = wrap_angle(x[idx])
    states = np.empty((horizon + 1, plant.state_dim))
    inputs = np.empty((horizon, plant.input_dim))
    states[0] = x
    for t in range(horizon):
        u = np.atleast_1d(np.asarray(controller(x, t), dtype=float))
        if u.shape != (plant.input_dim,):
            raise UsageError(f"controller returned shape {u.shape}, plant expects ({plant.input_dim},)")
        with np.errstate(over="ignore", invalid="ignore"):
            x = plant.step(x, u)
        if not np.all(np.isfinite(x)):
            raise RolloutError(t + 1)
        inputs[t] = u
        states[t + 1] = x
    return Trajectory(states, inputs, plant.dt, plant.angle_dims)


def learn_linear_least_squares(transitions, dt: float = 1.0, angle_dims: Sequence[int] = ()) -> LinearModel:
    """Fit ``x+ = A x + B u`` by least squares.

    ``transitions`` is either a sequence of ``(x, u, x_next)`` tuples or a
    tuple of stacked arrays ``(X, U, X_next)``. Angular coordinates of
    ``x_next`` are unwrapped relative to ``x`` before fitting so that a
    crossing of +-pi does not look like a 2*pi jump.
    """
    X, U, Xn = _stack_transitions(transitions)
    n, m = X.shape[1], U.shape[1]
    if angle_dims:
        idx = list(angle_dims)
        Xn = Xn.copy()
        Xn[:, idx] = X[:, idx] + wrap_angle(Xn[:, idx] - X[:, idx])
    Z = np.hstack([X, U])
    theta, _, rank, _ = np.linalg.lstsq(Z, Xn, rcond=None)
    deficient = rank < n + m
    if deficient:
        warnings.warn(f"regressor rank {rank} < {n + m}; returning minimum-norm solution",
                      RankDeficiencyWarning)
    AB = theta.T
    return LinearModel(AB[:, :n], AB[:, n:], dt, tuple(angle_dims), rank_deficient=deficient)


def _stack_transitions(transitions):
    if isinstance(transitions, tuple) and len(transitions) == 3 and np.ndim(transitions[0]) == 2:
        X, U, Xn = (np.asarray(a, dtype=float) for a in transitions)
    else:
        transitions = list(transitions)
        if not transitions:
            raise UsageError("no transitions given")
        X = np.array([np.atleast_1d(t[0]) for t in transitions], dtype=float)
        U = np.array([np.atleast_1d(t[1]) for t in transitions], dtype=float)
        Xn = np.array([np.atleast_1d(t[2]) for t in transitions], dtype=float)
    if X.shape[0] == 0:
        raise UsageError("no transitions given")
    return X, U, Xn


def residual_rms(model: LinearModel, transitions) -> float:
    X, U, Xn = _stack_transitions(transitions)
    if model.angle_dims:
        idx = list(model.angle_dims)
        Xn = Xn.copy()
        Xn[:, idx] = X[:, idx] + wrap_angle(Xn[:, idx] - X[:, idx])
    resid = Xn - X @ model.A.T - U @ model.B.T
    return float(np.sqrt(np.mean(resid**2)))


def sample_transitions(plant: Plant, n: int, state_box, input_box, seed: RngSeed | int):
    """Simulate ``n`` one-step transitions from uniform random ``(x, u)`` pairs.

    ``state_box`` and ``input_box`` are ``(lower, upper)`` pairs.
    """
    rng = as_seed(seed).generator()
    slo, shi = (np.asarray(b, dtype=float) for b in state_box)
    ulo, uhi = (np.asarray(b, dtype=float) for b in input_box)
    X = slo + rng.random((n, slo.size)) * (shi - slo)
    U = ulo + rng.random((n, ulo.size)) * (uhi - ulo)
    Xn = np.array([plant.step(x, u) for x, u in zip(X, U)])
    return X, U, Xn


def random_linear_system(state_dim: int, input_dim: int, seed: RngSeed | int,
                         spectral_cap: float = 0.95, dt: float = 1.0) -> LinearModel:
    """Uniform[-1, 1] entries, with A rescaled so its spectral radius is at most ``spectral_cap``."""
    if state_dim < 1 or input_dim < 1:
        raise UsageError("state and input dimensions must be >= 1")
    rng = as_seed(seed).generator()
    A = rng.uniform(-1.0, 1.0, (state_dim, state_dim))
    B = rng.uniform(-1.0, 1.0, (state_dim, input_dim))
    rho = np.max(np.abs(np.linalg.eigvals(A)))
    if rho > spectral_cap:
        A *= spectral_cap / rho * (1 - 1e-12)
    return LinearModel(A, B, dt)


def write_transitions_csv(path, X, U, Xn) -> None:
    X, U, Xn = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (X, U, Xn))
    n, m = X.shape[1], U.shape[1]
    header = [f"x{i}" for i in range(n)] + [f"u{j}" for j in range(m)] + [f"x_next{i}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.hstack([X, U, Xn]):
            w.writerow([repr(float(v)) for v in row])


def read_transitions_csv(path):
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader])
    n = sum(1 for h in header if h.startswith("x") and not h.startswith("x_next"))
    m = sum(1 for h in header if h.startswith("u"))
    rows = rows.reshape(-1, len(header))
    return rows[:, :n], rows[:, n:n + m], rows[:, n + m:]
