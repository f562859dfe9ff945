import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctxval.certify import BoundParams, Verdict, bound_r_n, calibrate_C, check_certificate, cumulative_regret
from ctxval.core import UsageError


def test_bound_values():
    assert abs(bound_r_n(BoundParams(1.0, 1), 1) - 1.0) <= 1e-12
    assert abs(bound_r_n(BoundParams(1.0, 1), 32) - np.sqrt(1 / 8)) <= 1e-12


@pytest.mark.parametrize("dim", range(1, 12))
def test_bound_exponent_law(dim):
    bp = BoundParams(2.0, dim)
    for n in (1, 3, 10, 250):
        ratio = bound_r_n(bp, 4 * n) / bound_r_n(bp, n)
        assert ratio == pytest.approx(4 ** (-3 / (2 * (3 + dim * (dim + 1)))), rel=1e-12)
        assert bound_r_n(bp, n + 1) < bound_r_n(bp, n)


def test_bound_rejects_bad_input():
    with pytest.raises(UsageError):
        bound_r_n(BoundParams(), 0)
    with pytest.raises(UsageError):
        BoundParams(C=0.0)


def C_for(r_n, dim=1, n=4):
    # C giving the requested r_n at (dim, n)
    return r_n / bound_r_n(BoundParams(1.0, dim), n)


@pytest.mark.parametrize("d_hat,verdict", [(0.1, Verdict.VALIDATED), (0.6, Verdict.NOT_VALIDATED),
                                           (0.35, Verdict.INCONCLUSIVE)])
def test_certificate_examples(d_hat, verdict):
    cert = check_certificate(d_hat, 4, 0.5, BoundParams(C_for(0.2)))
    assert cert.r_n == pytest.approx(0.2)
    assert cert.verdict is verdict
    assert cert.to_dict()["verdict"] == verdict.value


def test_certificate_trichotomy_property():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        d_hat, tau = rng.uniform(0, 2, 2)
        n = int(rng.integers(1, 500))
        bp = BoundParams(rng.uniform(0.01, 3), int(rng.integers(1, 12)))
        cert = check_certificate(d_hat, n, tau, bp)
        r = bound_r_n(bp, n)
        expected = (Verdict.VALIDATED if d_hat < tau - r else
                    Verdict.NOT_VALIDATED if d_hat >= tau else Verdict.INCONCLUSIVE)
        assert cert.verdict is expected


def test_cumulative_regret():
    assert cumulative_regret([1.0, 1.0], 1.0) == 0.0
    assert cumulative_regret([0.0, 0.0], 1.0) == 2.0
    with pytest.raises(UsageError):
        cumulative_regret([1.5], 1.0)


@settings(max_examples=200)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.floats(0, 1))
def test_regret_dominates_final_gap(ds, extra):
    d_star = max(ds) + extra
    assert cumulative_regret(ds, d_star) >= len(ds) * (d_star - max(ds)) - 1e-9


def test_calibrate_C_covers_pilots():
    rng = np.random.default_rng(3)
    pilots = [(1.0, rng.random(20)) for _ in range(40)]
    C = calibrate_C(pilots, dim=2, epsilon=0.1)
    bp = BoundParams(C, 2, 0.1)
    violations = 0
    for d_star, ds in pilots:
        best = np.maximum.accumulate(ds)
        violations += any(d_star - b > bound_r_n(bp, n) + 1e-12 for n, b in enumerate(best, 1))
    assert violations <= 0.1 * len(pilots)
