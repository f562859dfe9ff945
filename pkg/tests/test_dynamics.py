import warnings

import numpy as np
import pytest

from ctxval.control import OpenLoopSequence, linear_feedback
from ctxval.core import UsageError
from ctxval.dynamics import (DubinsCar, LinearModel, Pendulum, PendulumParams, RankDeficiencyWarning,
                             RolloutError, dubins_step, learn_linear_least_squares, pendulum_energy,
                             pendulum_step, random_linear_system, read_transitions_csv, residual_rms, rollout,
                             sample_transitions, write_transitions_csv)


def zero(m):
    return lambda x, t: np.zeros(m)


def test_pendulum_upright_equilibrium():
    np.testing.assert_array_equal(pendulum_step([0.0, 0.0], [0.0], PendulumParams()), [0.0, 0.0])


def test_pendulum_acceleration_at_horizontal():
    dt = 1e-5
    x = pendulum_step([np.pi / 2, 0.0], [0.0], PendulumParams(dt=dt))
    assert x[1] / dt == pytest.approx(3 * 9.81 / 2, rel=1e-6)


def test_pendulum_energy_conserved():
    p = PendulumParams(dt=0.01)
    x = np.array([1.0, 0.0])
    e0 = (p.m * p.l**2 / 6) * x[1] ** 2 + (p.m * p.g * p.l / 2) * np.cos(x[0])
    assert pendulum_energy(x, p) == pytest.approx(e0)
    for _ in range(1000):
        x = pendulum_step(x, [0.0], p)
    e1 = (p.m * p.l**2 / 6) * x[1] ** 2 + (p.m * p.g * p.l / 2) * np.cos(x[0])
    assert abs(e1 - e0) / abs(e0) < 1e-5


def test_rk4_fourth_order():
    x0, T = np.array([2.0, 0.5]), 1.0
    ref = x0.copy()
    fine = PendulumParams(dt=T / 4096)
    for _ in range(4096):
        ref = pendulum_step(ref, [0.3], fine, wrap=False)
    errs = []
    steps = (8, 16, 32, 64)
    for n in steps:
        x = x0.copy()
        for _ in range(n):
            x = pendulum_step(x, [0.3], PendulumParams(dt=T / n), wrap=False)
        errs.append(np.linalg.norm(x - ref))
    order = -np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert 3.5 <= order <= 4.5


def test_pendulum_wraps_angle():
    x = pendulum_step([np.pi - 1e-3, 5.0], [0.0], PendulumParams())
    assert -np.pi <= x[0] < 0


def test_dubins_examples():
    np.testing.assert_allclose(dubins_step([0.0, 0.0, 0.0], [1.0, 0.0], 1.0), [1.0, 0.0, 0.0])
    np.testing.assert_allclose(dubins_step([1.0, 2.0, 0.3], [0.0, 0.5], 0.2), [1.0, 2.0, 0.4])


def test_dubins_unit_circle():
    n = 1000
    dt = 2 * np.pi / n
    x = np.zeros(3)
    for _ in range(n):
        x = dubins_step(x, [1.0, 1.0], dt, wrap=False)
    np.testing.assert_allclose(x[:2], [0.0, 0.0], atol=1e-6)
    assert x[2] == pytest.approx(2 * np.pi, abs=1e-9)


def test_rollout_examples():
    m = LinearModel([[0.5]], [[1.0]])
    tr = rollout(m, [1.0], zero(1), 3)
    np.testing.assert_allclose(tr.states[:, 0], [1, 0.5, 0.25, 0.125])
    tr0 = rollout(m, [1.0], zero(1), 0)
    assert tr0.states.shape == (1, 1) and tr0.inputs.shape == (0, 1)
    eye = LinearModel(np.eye(2), np.ones((2, 1)))
    assert np.all(rollout(eye, [1.0, -2.0], zero(1), 5).states == [1.0, -2.0])


def test_rollout_errors():
    blow = LinearModel([[1e200]], [[1.0]])
    with pytest.raises(RolloutError):
        rollout(blow, [1e200], zero(1), 3)
    with pytest.raises(UsageError):
        rollout(blow, [1.0, 2.0], zero(1), 3)
    with pytest.raises(UsageError):
        rollout(blow, [1.0], zero(2), 3)


def test_exact_recovery_of_linear_system():
    true = random_linear_system(3, 2, 0, spectral_cap=2.0)
    rng = np.random.default_rng(1)
    X, U = rng.normal(size=(10, 3)), rng.normal(size=(10, 2))
    Xn = X @ true.A.T + U @ true.B.T
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit = learn_linear_least_squares((X, U, Xn))
    np.testing.assert_allclose(fit.A, true.A, atol=1e-8)
    np.testing.assert_allclose(fit.B, true.B, atol=1e-8)


def test_rank_deficient_data():
    data = [([1.0, 2.0], [0.5], [0.3, 0.1])] * 6
    with pytest.warns(RankDeficiencyWarning):
        fit = learn_linear_least_squares(data)
    assert fit.rank_deficient
    z = np.array([1.0, 2.0, 0.5])
    theta = np.linalg.pinv(np.outer(np.ones(6), z)) @ np.tile([0.3, 0.1], (6, 1))
    np.testing.assert_allclose(np.hstack([fit.A, fit.B]), theta.T, atol=1e-10)


def test_pendulum_fit_residual_matches_normal_equations():
    p = Pendulum(PendulumParams(dt=0.05))
    X, U, Xn = sample_transitions(p, 500, ([-np.pi, -8], [np.pi, 8]), ([-5], [5]), 3)
    fit = learn_linear_least_squares((X, U, Xn), 0.05, angle_dims=(0,))
    Xn_u = Xn.copy()
    Xn_u[:, 0] = X[:, 0] + (Xn[:, 0] - X[:, 0] + np.pi) % (2 * np.pi) - np.pi
    Z = np.hstack([X, U])
    theta = np.linalg.solve(Z.T @ Z, Z.T @ Xn_u)
    rms = np.sqrt(np.mean((Xn_u - Z @ theta) ** 2))
    assert residual_rms(fit, (X, U, Xn)) == pytest.approx(rms, rel=1e-9)


def test_random_linear_system():
    for n in (1, 2, 3, 5):
        s = random_linear_system(n, 1, 7)
        assert s.spectral_radius() <= 0.95 + 1e-9
        s2 = random_linear_system(n, 1, 7)
        np.testing.assert_array_equal(s.A, s2.A)
        np.testing.assert_array_equal(s.B, s2.B)
    assert abs(random_linear_system(1, 1, 3).A[0, 0]) <= 0.95


def test_transition_csv_round_trip(tmp_path):
    X, U, Xn = sample_transitions(DubinsCar(), 7, ([0, 0, 0], [1, 1, 1]), ([0, -1], [1, 1]), 0)
    write_transitions_csv(tmp_path / "t.csv", X, U, Xn)
    for a, b in zip(read_transitions_csv(tmp_path / "t.csv"), (X, U, Xn)):
        np.testing.assert_array_equal(a, b)


def test_closed_loop_linear_rollout_converges():
    m = LinearModel([[0.9]], [[1.0]])
    tr = rollout(m, [2.0], linear_feedback([[-0.5]], [1.0]), 60)
    # fixed point of x+ = 0.9x - 0.5(x - 1)
    assert tr.states[-1, 0] == pytest.approx(0.5 / 0.6, abs=1e-6)


def test_open_loop_sequence_holds_last_input():
    ctrl = OpenLoopSequence([[1.0], [2.0]])
    assert ctrl(None, 5)[0] == 2.0
