import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctxval.baselines import (SdConfig, random_search, running_sd, sc_sample_size, scenario_max, sd_feasible,
                              sd_max, sd_min_samples)
from ctxval.bo import custom_validate
from ctxval.core import ParamSpace, UsageError


def binomial_cdf_exact(N: int, k: int, eps: Fraction) -> Fraction:
    """P(Bin(N, eps) <= k - 1) in rational arithmetic."""
    return sum(math.comb(N, i) * eps**i * (1 - eps) ** (N - i) for i in range(k))


def test_scenario_max_examples():
    evals = [([0.0], 0.1), ([1.0], 0.9), ([2.0], 0.3)]
    assert scenario_max(evals) == (0.9, [1.0])
    assert scenario_max([([5.0], 0.2)]) == (0.2, [5.0])
    with pytest.raises(UsageError):
        scenario_max([])


def test_scenario_max_rescan():
    rng = np.random.default_rng(0)
    d = rng.random(1000)
    evals = [(i, v) for i, v in enumerate(d)]
    best = -1.0
    for i, v in evals:
        if v > best:
            best, arg = v, i
    assert scenario_max(evals) == (best, arg)


def test_sc_sample_size():
    assert sc_sample_size(0.1, 0.05) == 30
    assert sc_sample_size(0.5, 0.5) == 2
    for eps in (0.2, 0.1, 0.04):
        assert abs(sc_sample_size(eps / 2, 0.05) - 2 * sc_sample_size(eps, 0.05)) <= 1
    with pytest.raises(UsageError):
        sc_sample_size(0.0, 0.05)


def test_sd_max():
    evals = [(i, float(v)) for i, v in enumerate([1, 2, 3, 4, 5, 6])]
    assert sd_max(evals, SdConfig(discard_k=5))[0] == 1.0
    assert sd_max(evals, SdConfig(discard_k=0)) == scenario_max(evals)
    with pytest.raises(UsageError):
        sd_max(evals[:5], SdConfig(discard_k=5))


def test_sd_max_against_sort():
    rng = np.random.default_rng(1)
    d = rng.random(200)
    evals = list(enumerate(d))
    assert sd_max(evals, SdConfig(discard_k=5))[0] == sorted(d, reverse=True)[5]


def test_sd_feasibility_k1():
    cfg = SdConfig(discard_k=1, epsilon=0.1, confidence_beta=0.05)
    assert sd_feasible(29, cfg)
    assert not sd_feasible(28, cfg)
    assert sd_min_samples(cfg) == 29


@pytest.mark.parametrize("k", [1, 2, 5, 8])
def test_sd_min_samples_matches_exact_cdf(k):
    eps, beta = Fraction(1, 10), Fraction(1, 20)
    N = k
    while binomial_cdf_exact(N, k, eps) > beta:
        N += 1
    assert sd_min_samples(SdConfig(k, 0.1, 0.05)) == N


@given(st.integers(1, 400), st.integers(0, 10))
def test_sd_feasible_agrees_with_exact_cdf(N, k):
    cfg = SdConfig(k, 0.1, 0.05)
    exact = binomial_cdf_exact(N, k, Fraction(1, 10)) <= Fraction(1, 20)
    assert sd_feasible(N, cfg) == exact


def test_random_search_shares_initial_design_with_bo():
    f = lambda p: float(np.sum(p**2))
    space = ParamSpace([-1.0, -1.0], [1.0, 1.0])
    rs = random_search(f, space, 10, 4)
    bo = custom_validate(f, space, 8, 5, seed=4)
    np.testing.assert_array_equal(rs.params[:5], bo.params[:5])


def test_running_sd():
    f = lambda p: float(p[0])
    tr = random_search(f, ParamSpace([0.0], [1.0]), 20, 0, method="sd")
    r = running_sd(tr, SdConfig(discard_k=5))
    assert np.all(np.isnan(r[:5]))
    assert r[-1] == sd_max(list(zip(tr.params, tr.distances)), SdConfig(discard_k=5))[0]
    assert np.all(r[5:] <= tr.running_max[5:])
