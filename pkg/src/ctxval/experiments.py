"""Builders that bind a task family to a system, a learned model and a controller synthesizer.

Each builder returns an :class:`Experiment`: the closed-loop problem the
search methods query, its task space, and the pieces needed by the
framework-variant comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .control import QuadCost, ilqr, linear_feedback, lqr_tracking, open_loop_from_params
from .core import ParamSpace, RngSeed, as_seed
from .distances import ClosedLoopProblem, DistanceMeasure, Synthesis
from .dynamics import (DubinsCar, LinearModel, Pendulum, PendulumParams, learn_linear_least_squares,
                       random_linear_system, sample_transitions)
from .tasks import (TrackingTask, linear_regulation_task, linear_space, pendulum_space, pendulum_task,
                    reference_path, tracking_space)


@dataclass
class Experiment:
    name: str
    problem: ClosedLoopProblem
    space: ParamSpace
    open_loop: Callable[[np.ndarray], object] | None = None
    knot_space: ParamSpace | None = None
    info: dict = field(default_factory=dict)

    @property
    def system(self):
        return self.problem.system

    @property
    def model(self):
        return self.problem.model


@dataclass(frozen=True)
class PendulumSetup:
    m: float = 1.0
    l: float = 1.0
    g: float = 9.81
    dt: float = 0.05
    horizon: int = 100
    n_train: int = 500
    theta_range: tuple[float, float] = (-np.pi, np.pi)
    omega_range: tuple[float, float] = (-8.0, 8.0)
    torque_range: tuple[float, float] = (-5.0, 5.0)
    q_diag: tuple[float, float] = (10.0, 1.0)
    r: float = 0.1
    qf_scale: float = 100.0
    ilqr_iters: int = 50
    segments: int = 5


def pendulum_experiment(seed: RngSeed | int, setup: PendulumSetup = PendulumSetup(),
                        distance: str = "final_state_l1", identical: bool = False) -> Experiment:
    """Swing-up-to-angle tasks on a pendulum whose model is a least-squares linear fit.

    With ``identical=True`` the model is the pendulum itself (for self-distance checks).
    """
    seed = as_seed(seed)
    params = PendulumParams(setup.m, setup.l, setup.g, setup.dt)
    system = Pendulum(params)
    data = sample_transitions(system, setup.n_train,
                              ([setup.theta_range[0], setup.omega_range[0]],
                               [setup.theta_range[1], setup.omega_range[1]]),
                              ([setup.torque_range[0]], [setup.torque_range[1]]),
                              seed.child("train"))
    model = system if identical else learn_linear_least_squares(data, params.dt, angle_dims=(0,))
    step = Pendulum(params, wrap=False).step if identical else model.step
    Q = np.diag(setup.q_diag)
    R = np.atleast_2d(setup.r)

    def synthesize(p) -> Synthesis:
        task = pendulum_task(p[0])
        cost = QuadCost(Q, R, setup.qf_scale * Q, task.x_final)
        res = ilqr(step, cost, task.x_init, setup.horizon, iters=setup.ilqr_iters, angle_dims=(0,))
        return Synthesis(res.controller, task.x_init, setup.horizon, task.x_final)

    bounds = (np.array([setup.torque_range[0]]), np.array([setup.torque_range[1]]))
    problem = ClosedLoopProblem(system, model, synthesize, DistanceMeasure(distance))
    return Experiment(
        "pendulum", problem, pendulum_space(),
        open_loop=lambda knots: open_loop_from_params(knots, setup.segments, setup.horizon, bounds),
        knot_space=ParamSpace(np.full(setup.segments, bounds[0][0]), np.full(setup.segments, bounds[1][0])),
        info={"model": _model_info(model), "train_size": setup.n_train},
    )


@dataclass(frozen=True)
class DubinsSetup:
    dt: float = 0.1
    horizon: int = 100
    n_train: int = 500
    y_range: tuple[float, float] = (-1.0, 3.0)
    z_range: tuple[float, float] = (-3.0, 3.0)
    phi_range: tuple[float, float] = (-np.pi / 3, np.pi / 3)
    v_range: tuple[float, float] = (0.0, 2.0)
    omega_range: tuple[float, float] = (-2.0, 2.0)
    q_diag: tuple[float, float, float] = (1.0, 1.0, 0.0)
    r_diag: tuple[float, float] = (0.1, 0.1)
    qf_scale: float = 10.0


def dubins_experiment(seed: RngSeed | int, setup: DubinsSetup = DubinsSetup(),
                      distance: str = "traj_l2_avg", identical: bool = False) -> Experiment:
    """Sum-of-sines path tracking with LQR designed on a least-squares linear car model."""
    seed = as_seed(seed)
    system = DubinsCar(setup.dt)
    lo = [setup.y_range[0], setup.z_range[0], setup.phi_range[0]]
    hi = [setup.y_range[1], setup.z_range[1], setup.phi_range[1]]
    ulo, uhi = [setup.v_range[0], setup.omega_range[0]], [setup.v_range[1], setup.omega_range[1]]
    data = sample_transitions(system, setup.n_train, (lo, hi), (ulo, uhi), seed.child("train"))
    model = learn_linear_least_squares(data, setup.dt, angle_dims=(2,))
    Q = np.diag(setup.q_diag)
    R = np.diag(setup.r_diag)
    bounds = (np.array(ulo), np.array(uhi))
    synth_model = _linearization_of(system) if identical else model

    def synthesize(p) -> Synthesis:
        task = TrackingTask(p, setup.horizon)
        cost = QuadCost(Q, R, setup.qf_scale * Q, reference_path(task))
        ctrl = lqr_tracking(synth_model, cost, setup.horizon, angle_dims=(2,), u_bounds=bounds)
        return Synthesis(ctrl, task.x_init, setup.horizon, reference_path(task)[-1])

    problem = ClosedLoopProblem(system, system if identical else model, synthesize, DistanceMeasure(distance))
    return Experiment("dubins", problem, tracking_space(), info={"model": _model_info(model)})


def _linearization_of(car: DubinsCar) -> LinearModel:
    # linearization about phi = 0, v = 1; only used to synthesize when model == system
    A = np.eye(3)
    A[1, 2] = car.dt
    B = np.zeros((3, 2))
    B[0, 0] = car.dt
    B[2, 1] = car.dt
    return LinearModel(A, B, car.dt, (2,))


@dataclass(frozen=True)
class LinearSetup:
    state_dim: int = 1
    input_dim: int = 1
    horizon: int = 20
    spectral_cap: float = 0.95
    gain_scale: float = 0.5
    half_width: float = 1.0


def linear_experiment(seed: RngSeed | int, setup: LinearSetup = LinearSetup(),
                      distance: str = "final_state_l1", identical: bool = False) -> Experiment:
    """Point-to-point regulation of a random linear system; the abstraction is another random system."""
    seed = as_seed(seed)
    n, m = setup.state_dim, setup.input_dim
    system = random_linear_system(n, m, seed.child("system"), setup.spectral_cap)
    model = system if identical else random_linear_system(n, m, seed.child("model"), setup.spectral_cap)
    K = seed.child("gain").generator().uniform(-setup.gain_scale, setup.gain_scale, (m, n))

    def synthesize(p) -> Synthesis:
        task = linear_regulation_task(p, n)
        return Synthesis(linear_feedback(K, task.x_final), task.x_init, setup.horizon, task.x_final)

    problem = ClosedLoopProblem(system, model, synthesize, DistanceMeasure(distance))
    return Experiment(f"linear{n}", problem, linear_space(n, setup.half_width),
                      info={"system": _model_info(system), "model": _model_info(model), "K": K.tolist()})


def linear_closed_loop_map(exp: Experiment, setup: LinearSetup) -> np.ndarray:
    """Matrix ``M`` with ``x_S(H) - x_M(H) = M p`` (final states are linear in the task)."""
    n = setup.state_dim
    cols = []
    for e in np.eye(2 * n):
        ev = exp.problem.evaluate(e)
        cols.append(ev.system_traj.final_state - ev.model_traj.final_state)
    return np.array(cols).T


def linear_true_max(exp: Experiment, setup: LinearSetup) -> tuple[float, np.ndarray]:
    """Exact maximum of ``||M p||_1`` over the box by enumerating its vertices."""
    M = linear_closed_loop_map(exp, setup)
    V = exp.space.vertices()
    vals = np.sum(np.abs(V @ M.T), axis=1)
    i = int(np.argmax(vals))
    return float(vals[i]), V[i]


def _model_info(model) -> dict:
    if isinstance(model, LinearModel):
        return {"A": model.A.tolist(), "B": model.B.tolist(), "dt": model.dt}
    return {"type": type(model).__name__}


FAMILIES = {"pendulum", "dubins", "linear"}
