"""Task families: mapping a task parameter vector to a concrete control objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ParamSpace, UsageError

N_HARMONICS = 10


@dataclass(frozen=True)
class RegulationTask:
    """Drive the state from ``x_init`` to ``x_final``.

    ``mask`` selects which state coordinates the target constrains; ``None``
    means all of them.
    """

    x_init: np.ndarray
    x_final: np.ndarray
    mask: tuple[int, ...] | None = None

    def __post_init__(self):
        x_init = np.atleast_1d(np.asarray(self.x_init, dtype=float))
        x_final = np.atleast_1d(np.asarray(self.x_final, dtype=float))
        if x_init.shape != x_final.shape:
            raise UsageError("x_init and x_final must have the same dimension")
        if self.mask is not None and any(not 0 <= i < x_init.size for i in self.mask):
            raise UsageError("mask indexes outside the state")
        object.__setattr__(self, "x_init", x_init)
        object.__setattr__(self, "x_final", x_final)


@dataclass(frozen=True)
class TrackingTask:
    """Follow a sum-of-sines path in the plane: final ``y`` is ``a0``, ``z`` wiggles with amplitudes ``a[1:]``."""

    amplitudes: np.ndarray
    horizon: int = 100
    x_init: np.ndarray = np.zeros(3)

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=float).ravel()
        if a.size != N_HARMONICS + 1:
            raise UsageError(f"need {N_HARMONICS + 1} parameters (a0..a10), got {a.size}")
        if not 0 <= a[0] <= 2 or np.any(a[1:] < 0) or np.any(a[1:] > 1):
            raise UsageError("require a0 in [0, 2] and a1..a10 in [0, 1]")
        if self.horizon < 1:
            raise UsageError("horizon must be >= 1")
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "x_init", np.asarray(self.x_init, dtype=float))

    @property
    def a0(self) -> float:
        return float(self.amplitudes[0])


def reference_trajectory(task: TrackingTask, t: int) -> np.ndarray:
    """Desired ``(y, z, phi)`` at step ``t``; with ``a0 == 0`` the sine sum is taken as 0."""
    if not 0 <= t <= task.horizon:
        raise UsageError(f"t={t} outside [0, {task.horizon}]")
    return reference_path(task)[t]


def reference_path(task: TrackingTask) -> np.ndarray:
    """All ``H + 1`` reference states stacked, shape ``(H+1, 3)``."""
    t = np.arange(task.horizon + 1)
    y = t * task.a0 / task.horizon
    ref = np.zeros((t.size, 3))
    ref[:, 0] = y
    if task.a0 > 0:
        j = np.arange(1, N_HARMONICS + 1)
        ref[:, 1] = np.sin(2 * np.pi * np.outer(y / task.a0, j)) @ task.amplitudes[1:]
    return ref


def tracking_space() -> ParamSpace:
    return ParamSpace(np.zeros(N_HARMONICS + 1), np.r_[2.0, np.ones(N_HARMONICS)])


def pendulum_space() -> ParamSpace:
    # the grid oracle closes the interval; theta = pi and -pi are the same target
    return ParamSpace([-np.pi], [np.pi])


def pendulum_task(theta_final: float) -> RegulationTask:
    """Swing up from hanging (theta = pi) to ``theta_final`` at rest."""
    theta_final = float(np.ravel(theta_final)[0])
    if not -np.pi <= theta_final <= np.pi:
        raise UsageError(f"theta_final={theta_final} outside [-pi, pi]")
    return RegulationTask(np.array([np.pi, 0.0]), np.array([theta_final, 0.0]))


def linear_regulation_task(p, n: int) -> RegulationTask:
    p = np.asarray(p, dtype=float).ravel()
    if p.size != 2 * n:
        raise UsageError(f"expected {2 * n} parameters for a {n}-state system, got {p.size}")
    return RegulationTask(p[:n], p[n:])


def linear_space(n: int, half_width: float = 1.0) -> ParamSpace:
    return ParamSpace(-half_width * np.ones(2 * n), half_width * np.ones(2 * n))
