import numpy as np
import pytest

from ctxval.core import UsageError
from ctxval.tasks import (TrackingTask, linear_regulation_task, linear_space, pendulum_space, pendulum_task,
                          reference_path, reference_trajectory, tracking_space)


def test_reference_examples():
    rng = np.random.default_rng(0)
    task = TrackingTask(np.r_[rng.uniform(0.1, 2), rng.random(10)], horizon=100)
    np.testing.assert_array_equal(reference_trajectory(task, 0), [0.0, 0.0, 0.0])
    np.testing.assert_allclose(reference_trajectory(task, 100), [task.a0, 0.0, 0.0], atol=1e-12)
    single = TrackingTask(np.r_[2.0, 1.0, np.zeros(9)], horizon=100)
    np.testing.assert_allclose(reference_trajectory(single, 25), [0.5, 1.0, 0.0], atol=1e-12)


def test_reference_zero_length_path():
    task = TrackingTask(np.r_[0.0, np.ones(10)])
    assert np.all(reference_path(task) == 0)


def test_reference_path_matches_sum_of_sines():
    rng = np.random.default_rng(1)
    a = np.r_[1.3, rng.random(10)]
    task = TrackingTask(a, horizon=40)
    path = reference_path(task)
    for t in (0, 7, 19, 40):
        y = t * a[0] / 40
        z = sum(a[j] * np.sin(2 * np.pi * j * y / a[0]) for j in range(1, 11))
        np.testing.assert_allclose(path[t], [y, z, 0.0], atol=1e-12)


def test_tracking_validation():
    with pytest.raises(UsageError):
        TrackingTask(np.ones(10))
    with pytest.raises(UsageError):
        TrackingTask(np.r_[2.5, np.zeros(10)])
    with pytest.raises(UsageError):
        reference_trajectory(TrackingTask(np.r_[1.0, np.zeros(10)], 10), 11)
    sp = tracking_space()
    assert sp.dim == 11 and sp.upper[0] == 2.0


def test_pendulum_tasks():
    np.testing.assert_array_equal(pendulum_task(0.0).x_final, [0.0, 0.0])
    t = pendulum_task(np.pi)
    assert t.x_final[0] == t.x_init[0]
    with pytest.raises(UsageError):
        pendulum_task(4.0)
    assert pendulum_space().dim == 1


def test_linear_tasks():
    t = linear_regulation_task([0.0, 1.0], 1)
    assert t.x_init[0] == 0.0 and t.x_final[0] == 1.0
    t = linear_regulation_task([0, 0, 1, -1], 2)
    np.testing.assert_array_equal(t.x_init, [0, 0])
    np.testing.assert_array_equal(t.x_final, [1, -1])
    same = linear_regulation_task([0.3, 0.3], 1)
    assert same.x_init[0] == same.x_final[0]
    with pytest.raises(UsageError):
        linear_regulation_task([0.0, 1.0, 2.0], 1)
    assert linear_space(3).dim == 6
