import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctxval.core import Dataset, UsageError
from ctxval.gp import (GPState, HyperBounds, KernelParams, _lml_and_grad, fit_hyperparams, log_marginal_likelihood,
                       matern32, matern32_matrix, posterior, update)


def dense_kernel(X1, X2, k: KernelParams):
    # independent loop-based evaluation of the closed form
    out = np.empty((len(X1), len(X2)))
    for i, a in enumerate(X1):
        for j, b in enumerate(X2):
            r = np.sqrt(np.sum(((a - b) / k.lengthscales) ** 2))
            out[i, j] = k.signal_variance * (1 + np.sqrt(3) * r) * np.exp(-np.sqrt(3) * r)
    return out


def dense_oracle(X, y, k: KernelParams, Xs):
    Kinv = np.linalg.inv(dense_kernel(X, X, k) + k.noise_variance * np.eye(len(X)))
    Ks = dense_kernel(Xs, X, k)
    mean = Ks @ Kinv @ y
    var = k.signal_variance - np.einsum("ij,jk,ik->i", Ks, Kinv, Ks)
    _, logdet = np.linalg.slogdet(dense_kernel(X, X, k) + k.noise_variance * np.eye(len(X)))
    lml = -0.5 * y @ Kinv @ y - 0.5 * logdet - 0.5 * len(y) * np.log(2 * np.pi)
    return mean, var, lml


def random_problem(rng):
    dim = int(rng.integers(1, 6))
    n = int(rng.integers(1, 21))
    k = KernelParams(rng.uniform(0.5, 2.0), rng.uniform(0.3, 1.5, dim), rng.uniform(1e-2, 1e-1))
    X = rng.random((n, dim))
    y = rng.normal(size=n)
    return k, Dataset(X, y), rng.random((7, dim))


def test_matern_closed_form_high_precision():
    ref = float((1 + mpmath.sqrt(3)) * mpmath.exp(-mpmath.sqrt(3)))
    assert matern32([0.0], [1.0], KernelParams(1.0, [1.0])) == pytest.approx(ref, abs=1e-15)
    assert ref == pytest.approx(0.48336, abs=1e-5)


def test_matern_limits():
    k = KernelParams(2.5, [0.3, 0.7])
    assert matern32([0.1, 0.2], [0.1, 0.2], k) == 2.5
    assert matern32([0.0, 0.0], [15.0, 0.0], k) < 1e-20 * 2.5
    with pytest.raises(UsageError):
        matern32([0.0], [0.0, 1.0], k)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_kernel_matrix_psd_and_symmetric(s):
    rng = np.random.default_rng(s)
    k = KernelParams(1.0, rng.uniform(0.1, 2, 3))
    X = rng.random((15, 3))
    K = matern32_matrix(X, X, k)
    np.testing.assert_allclose(K, K.T, atol=0)
    assert np.linalg.eigvalsh(K).min() > -1e-10


def test_prior_and_interpolation():
    k = KernelParams(1.7, [0.4], 0.0)
    assert posterior(GPState.prior(k), [0.3]) == (0.0, 1.7)
    gp = GPState.build(k, Dataset([[0.2]], [0.9]))
    m, v = posterior(gp, [0.2])
    assert m == pytest.approx(0.9, abs=1e-8) and v == pytest.approx(0.0, abs=1e-8)


def test_three_point_posterior_against_dense_inverse():
    k = KernelParams(1.0, [0.3], 1e-6)
    X = np.array([[0.0], [0.5], [1.0]])
    y = np.array([0.0, 1.0, 0.0])
    m, v = posterior(GPState.build(k, Dataset(X, y)), [0.25])
    mo, vo, _ = dense_oracle(X, y, k, np.array([[0.25]]))
    assert m == pytest.approx(mo[0], abs=1e-8)
    assert v == pytest.approx(vo[0], abs=1e-8)


def test_lml_closed_form_single_point():
    k = KernelParams(0.5, [1.0], 0.5)
    assert log_marginal_likelihood(Dataset([[0.0]], [0.0]), k) == pytest.approx(-0.5 * np.log(2 * np.pi))


def test_lml_decreases_when_scaling_observations():
    rng = np.random.default_rng(0)
    k = KernelParams(1.0, [0.3], 1e-4)
    X = rng.random((6, 1))
    y = rng.normal(size=6)
    assert log_marginal_likelihood(Dataset(X, 10 * y), k) < log_marginal_likelihood(Dataset(X, y), k)


def test_dense_inverse_equivalence_random():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        k, data, Xs = random_problem(rng)
        gp = GPState.build(k, data)
        assert gp.jitter == 0.0
        mean, var = gp.predict(Xs)
        mo, vo, lml = dense_oracle(data.X, data.y, k, Xs)
        np.testing.assert_allclose(mean, mo, atol=1e-8)
        np.testing.assert_allclose(var, vo, atol=1e-8)
        assert log_marginal_likelihood(data, k) == pytest.approx(lml, abs=1e-8)


def test_lml_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    X = rng.random((12, 2))
    data = Dataset(X, np.sin(4 * X[:, 0]) + X[:, 1])
    theta = np.log([1.3, 0.4, 0.7, 1e-3])

    def f(th):
        return _lml_and_grad(data, KernelParams(np.exp(th[0]), np.exp(th[1:3]), np.exp(th[3])))

    g = f(theta)[1]
    for i in range(4):
        e = np.zeros(4)
        e[i] = 1e-6
        fd = (f(theta + e)[0] - f(theta - e)[0]) / 2e-6
        assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_rank_one_update_equals_refactorization():
    rng = np.random.default_rng(9)
    k = KernelParams(1.2, [0.3, 0.5], 1e-6)
    X = rng.random((10, 2))
    y = rng.normal(size=10)
    gp = GPState.prior(k)
    for x, d in zip(X, y):
        gp = update(gp, x, d)
    full = GPState.build(k, Dataset(X, y))
    np.testing.assert_allclose(gp.chol, full.chol, atol=1e-10)
    Xs = rng.random((20, 2))
    for a, b in zip(gp.predict(Xs), full.predict(Xs)):
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_update_noiseless_interpolates():
    k = KernelParams(1.0, [0.2], 0.0)
    gp = update(GPState.build(k, Dataset([[0.0]], [1.0])), [0.7], -0.4)
    assert posterior(gp, [0.7])[0] == pytest.approx(-0.4, abs=1e-8)


def test_noisy_duplicate_moves_toward_average():
    k = KernelParams(1.0, [0.2], 0.1)
    gp = GPState.build(k, Dataset([[0.5]], [1.0]))
    before = posterior(gp, [0.5])[0]
    after = posterior(update(gp, [0.5], 0.0), [0.5])[0]
    assert after < before
    assert abs(after - 0.5) < abs(before - 0.5)


def test_update_rejects_bad_input():
    gp = GPState.prior(KernelParams(1.0, [0.2]))
    with pytest.raises(UsageError):
        update(gp, [0.1], np.inf)
    with pytest.raises(UsageError):
        update(gp, [0.1, 0.2], 1.0)


def test_serialization_round_trip():
    rng = np.random.default_rng(1)
    gp = GPState.build(KernelParams(1.0, [0.3, 0.2], 1e-4), Dataset(rng.random((5, 2)), rng.normal(size=5)))
    back = GPState.from_dict(gp.to_dict())
    Xs = rng.random((4, 2))
    np.testing.assert_allclose(back.predict(Xs)[0], gp.predict(Xs)[0])


def test_fit_recovers_lengthscale_of_gp_draw():
    rng = np.random.default_rng(11)
    X = np.sort(rng.random((30, 1)) * 5, axis=0)
    true = KernelParams(1.0, [0.5], 1e-6)
    K = matern32_matrix(X, X, true) + 1e-8 * np.eye(30)
    y = np.linalg.cholesky(K) @ rng.normal(size=30)
    wide = HyperBounds((np.log(1e-2), np.log(1e2)), (np.log(1e-2), np.log(1e2)), (np.log(1e-8), np.log(1e-1)))
    k = fit_hyperparams(Dataset(X, y), wide, restarts=8, seed=0)
    assert 0.25 <= k.lengthscales[0] <= 1.0


def test_fit_survives_duplicates():
    data = Dataset([[0.3], [0.3]], [1.0, 1.0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        k = fit_hyperparams(data, restarts=2)
    assert np.isfinite(k.signal_variance)


def test_more_restarts_never_worse():
    rng = np.random.default_rng(3)
    X = rng.random((15, 2))
    data = Dataset(X, np.cos(6 * X[:, 0]) * X[:, 1])
    l1 = log_marginal_likelihood(data, fit_hyperparams(data, restarts=1, seed=4))
    l8 = log_marginal_likelihood(data, fit_hyperparams(data, restarts=8, seed=4))
    assert l8 >= l1 - 1e-9
