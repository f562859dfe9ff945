"""Distance measures between closed-loop trajectories and the four validation variants."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from .core import Trajectory, UsageError, state_difference
from .dynamics import Plant, rollout


def _angle_dims(a: Trajectory, b: Trajectory) -> tuple[int, ...]:
    return tuple(sorted(set(a.angle_dims) | set(b.angle_dims)))


def _check_pair(a: Trajectory, b: Trajectory):
    if a.states.shape != b.states.shape:
        raise UsageError(f"trajectory shapes differ: {a.states.shape} vs {b.states.shape}")


def _project(diff: np.ndarray, mask):
    return diff if mask is None else diff[..., list(mask)]


def final_state_l1(a: Trajectory, b: Trajectory, mask: Sequence[int] | None = None) -> float:
    _check_pair(a, b)
    diff = state_difference(a.final_state, b.final_state, _angle_dims(a, b))
    return float(np.sum(np.abs(_project(diff, mask))))


def traj_linf(a: Trajectory, b: Trajectory, mask: Sequence[int] | None = None) -> float:
    _check_pair(a, b)
    diff = state_difference(a.states, b.states, _angle_dims(a, b))
    return float(np.max(np.abs(_project(diff, mask))))


def traj_l2_avg(a: Trajectory, b: Trajectory, mask: Sequence[int] | None = None) -> float:
    """``(1/H) * ||stacked state differences||_2``; ``H = 0`` falls back to the plain norm."""
    _check_pair(a, b)
    diff = _project(state_difference(a.states, b.states, _angle_dims(a, b)), mask)
    return float(np.linalg.norm(diff.ravel()) / max(a.horizon, 1))


def task_performance_l1(system_traj: Trajectory, target, mask: Sequence[int] | None = None) -> float:
    target = np.atleast_1d(np.asarray(target, dtype=float))
    final = system_traj.final_state
    angles = system_traj.angle_dims
    if mask is not None:
        final = final[list(mask)]
        angles = tuple(i for i, j in enumerate(mask) if j in system_traj.angle_dims)
    if final.shape != target.shape:
        raise UsageError(f"target has shape {target.shape}, projected final state has {final.shape}")
    return float(np.sum(np.abs(state_difference(final, target, angles))))


@dataclass(frozen=True)
class DistanceMeasure:
    """A named measure with an optional state projection applied before differencing.

    Called as ``measure(system_traj, model_traj, target)``; ``target`` only
    matters for ``task_performance_l1``.
    """

    name: str
    mask: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.name not in MEASURES:
            raise UsageError(f"unknown distance measure {self.name!r}; choose from {sorted(MEASURES)}")

    def __call__(self, system_traj: Trajectory, model_traj: Trajectory, target=None) -> float:
        if self.name == "task_performance_l1":
            if target is None:
                raise UsageError("task_performance_l1 needs a target")
            return task_performance_l1(system_traj, target, self.mask)
        return MEASURES[self.name](system_traj, model_traj, self.mask)


MEASURES: dict[str, Callable] = {
    "final_state_l1": final_state_l1,
    "traj_linf": traj_linf,
    "traj_l2_avg": traj_l2_avg,
    "task_performance_l1": task_performance_l1,
}


@dataclass(frozen=True)
class Synthesis:
    """What a synthesizer hands to the closed-loop evaluation for one task."""

    controller: object
    x0: np.ndarray
    horizon: int
    target: np.ndarray | None = None


class Synthesizer(Protocol):
    def __call__(self, p: np.ndarray) -> Synthesis: ...


@dataclass
class Evaluation:
    p: np.ndarray
    distance: float
    checksum: str
    system_traj: Trajectory
    model_traj: Trajectory


@dataclass
class ClosedLoopProblem:
    """Synthesize on the model, run the same controller on model and system, measure the gap."""

    system: Plant
    model: Plant
    synthesize: Synthesizer
    distance: DistanceMeasure

    def evaluate(self, p) -> Evaluation:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        syn = self.synthesize(p)
        checksum = syn.controller.checksum()
        model_traj = rollout(self.model, syn.x0, syn.controller, syn.horizon)
        system_traj = rollout(self.system, syn.x0, syn.controller, syn.horizon)
        if syn.controller.checksum() != checksum:
            raise RuntimeError("controller mutated between model and system rollouts")
        d = self.distance(system_traj, model_traj, syn.target)
        return Evaluation(p, d, checksum, system_traj, model_traj)

    def __call__(self, p) -> float:
        return self.evaluate(p).distance


class FrameworkVariant(enum.Enum):
    OLDT = "oldt"
    CCDT = "ccdt"
    OLCD = "olcd"
    CUSTOM = "custom"

    @property
    def open_loop(self) -> bool:
        return self in (FrameworkVariant.OLDT, FrameworkVariant.OLCD)


def evaluate_variant(variant: FrameworkVariant, plant: Plant, model: Plant, synth: Synthesizer,
                     dist: DistanceMeasure, p_aug, task_dim: int,
                     open_loop: Callable[[np.ndarray], object] | None = None) -> float:
    """Distance of one variant at an augmented parameter ``p_aug = (p, knots)``.

    ``open_loop`` maps the knot part of ``p_aug`` to an open-loop controller;
    it is required for OLDT/OLCD. The closed-loop variants ignore the knots.
    OLDT/CCDT use ``traj_linf``; OLCD/CUSTOM use ``dist``.
    """
    p_aug = np.atleast_1d(np.asarray(p_aug, dtype=float))
    p, knots = p_aug[:task_dim], p_aug[task_dim:]
    syn = synth(p)
    if variant.open_loop:
        if open_loop is None or knots.size == 0:
            raise UsageError(f"{variant.name} needs open-loop knots and an open-loop parameterization")
        syn = Synthesis(open_loop(knots), syn.x0, syn.horizon, syn.target)
    measure = DistanceMeasure("traj_linf", dist.mask) if variant in (
        FrameworkVariant.OLDT, FrameworkVariant.CCDT) else dist
    problem = ClosedLoopProblem(plant, model, lambda _: syn, measure)
    return problem(p)
