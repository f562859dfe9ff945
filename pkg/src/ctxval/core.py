"""Shared value types: task spaces, trajectories, datasets and seeded RNG streams."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class UsageError(ValueError):
    """Raised when an operation is called with arguments violating its contract."""


class NumericalError(ArithmeticError):
    """Raised when a numerical routine cannot produce a trustworthy result."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def wrap_angle(x):
    """Wrap angles to [-pi, pi)."""
    return (np.asarray(x) + np.pi) % (2.0 * np.pi) - np.pi


def state_difference(a, b, angle_dims: Sequence[int] = ()) -> np.ndarray:
    """``a - b`` with angular coordinates differenced on the circle.

    Works on single states (shape ``(n,)``) and stacks (shape ``(..., n)``).
    """
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if len(angle_dims):
        diff = diff.copy()
        idx = list(angle_dims)
        diff[..., idx] = wrap_angle(diff[..., idx])
    return diff


@dataclass(frozen=True)
class RngSeed:
    """Root of a tree of independent random streams.

    Child streams are addressed by a path of integers (or names, hashed with
    crc32) so that drawing from one stream never shifts another.
    """

    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise UsageError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def child(self, key: int | str) -> "RngSeed":
        if isinstance(key, str):
            key = zlib.crc32(key.encode())
        return RngSeed(self.seed, self.path + (int(key),))

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(int(self.seed), spawn_key=self.path))


def as_seed(seed: RngSeed | int) -> RngSeed:
    return seed if isinstance(seed, RngSeed) else RngSeed(int(seed))


@dataclass(frozen=True)
class ParamSpace:
    """Axis-aligned box of task parameters."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _frozen(np.atleast_1d(self.lower))
        hi = _frozen(np.atleast_1d(self.upper))
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size == 0:
            raise UsageError("lower and upper must be non-empty vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise UsageError("bounds must be finite")
        if np.any(lo >= hi):
            raise UsageError(f"every lower bound must be strictly below its upper bound: {lo} vs {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, p) -> bool:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if p.shape != (self.dim,):
            raise UsageError(f"parameter has shape {p.shape}, space has dimension {self.dim}")
        return bool(np.all(self.lower <= p) and np.all(p <= self.upper))

    def clip(self, p) -> np.ndarray:
        return np.clip(p, self.lower, self.upper)

    def to_unit(self, p) -> np.ndarray:
        return (np.asarray(p, dtype=float) - self.lower) / self.width

    def from_unit(self, u) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * self.width

    def grid(self, resolution: int | Sequence[int]) -> np.ndarray:
        """Uniform tensor grid including both box ends, shape ``(prod(res), dim)``."""
        res = np.broadcast_to(np.asarray(resolution, dtype=int), (self.dim,))
        axes = [np.linspace(lo, hi, r) if r > 1 else np.array([(lo + hi) / 2])
                for lo, hi, r in zip(self.lower, self.upper, res)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def vertices(self) -> np.ndarray:
        """All 2**dim corners of the box."""
        bits = (np.arange(2**self.dim)[:, None] >> np.arange(self.dim)) & 1
        return np.where(bits == 1, self.upper, self.lower)

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


def contains(space: ParamSpace, p) -> bool:
    return space.contains(p)


def sample_uniform(space: ParamSpace, n: int, seed: RngSeed | int) -> np.ndarray:
    """Draw ``n`` i.i.d. uniform points from the box, shape ``(n, dim)``."""
    if n < 1:
        raise UsageError(f"n must be >= 1, got {n}")
    rng = as_seed(seed).generator()
    return space.lower + rng.random((n, space.dim)) * space.width


@dataclass(frozen=True)
class Trajectory:
    """States ``x_0..x_H`` and inputs ``u_0..u_{H-1}`` of one rollout.

    ``angle_dims`` marks state coordinates living on the circle; distance
    measures difference them modulo 2*pi.
    """

    states: np.ndarray
    inputs: np.ndarray
    dt: float
    angle_dims: tuple[int, ...] = ()

    def __post_init__(self):
        states = _frozen(self.states)
        if states.ndim != 2 or states.shape[0] < 1:
            raise UsageError(f"states must have shape (H+1, n), got {states.shape}")
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.size == 0:
            inputs = inputs.reshape(0, inputs.shape[-1] if inputs.ndim == 2 else 0)
        inputs = _frozen(inputs)
        if inputs.ndim != 2 or inputs.shape[0] != states.shape[0] - 1:
            raise UsageError(
                f"need len(inputs) == len(states) - 1, got {inputs.shape[0]} and {states.shape[0]}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "angle_dims", tuple(int(i) for i in self.angle_dims))

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class Dataset:
    """Observed ``(p_i, d_i)`` pairs, stored as an ``(n, dim)`` matrix and an ``(n,)`` vector."""

    X: np.ndarray
    y: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim == 1:
            X = X.reshape(len(y), -1) if len(y) else X.reshape(0, X.size)
        if X.shape[0] != y.shape[0]:
            raise UsageError(f"{X.shape[0]} parameters but {y.shape[0]} observations")
        if not np.all(np.isfinite(y)):
            raise UsageError("observed distances must be finite")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))

    @classmethod
    def empty(cls, dim: int) -> "Dataset":
        return cls(np.zeros((0, dim)), np.zeros(0))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Sequence[float], float]]) -> "Dataset":
        pairs = list(pairs)
        if not pairs:
            raise UsageError("cannot infer dimension from an empty pair list; use Dataset.empty")
        X = np.array([np.atleast_1d(p) for p, _ in pairs], dtype=float)
        return cls(X, np.array([d for _, d in pairs], dtype=float))

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def append(self, p, d: float) -> "Dataset":
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if p.shape != (self.dim,):
            raise UsageError(f"parameter has shape {p.shape}, dataset has dimension {self.dim}")
        return Dataset(np.vstack([self.X, p]), np.append(self.y, float(d)))
