import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biascal import ControlRecord, ControlSet, ValidationError, calibrated_p, fit_null
from biascal.empirical_null import NullDistribution, fit_null_arrays, null_log_likelihood

import oracles


def _negatives(est, se):
    return ControlSet(
        [ControlRecord("db", f"T{i}", "C", f"O{i}", f"F{i}", 1.0, float(e), float(s))
         for i, (e, s) in enumerate(zip(est, se))],
        "db",
    )


@pytest.fixture(scope="module")
def thousand_negatives():
    rng = np.random.default_rng(2024)
    beta = rng.normal(0.25, 0.05, 1000)
    se = np.full(1000, 0.1)
    est = beta + se * rng.standard_normal(1000)
    return est, se


def test_all_zero_estimates_give_degenerate_null():
    null = fit_null(_negatives(np.zeros(20), np.linspace(0.05, 0.5, 20)))
    assert null.nu == pytest.approx(0.0, abs=1e-10)
    assert null.sigma2 == 0.0


def test_symmetric_pair_gives_zero_mean():
    null = fit_null(_negatives([-0.3, 0.3], [0.1, 0.1]))
    assert null.nu == pytest.approx(0.0, abs=1e-10)


def test_recovery_against_grid_oracle(thousand_negatives):
    est, se = thousand_negatives
    null = fit_null_arrays(est, se)
    assert abs(null.nu - 0.25) <= 0.01
    assert abs(null.sigma - 0.05) <= 0.02
    nu_g, s2_g, ll_g = oracles.grid_argmax_null(est, se, (0.1, 0.4), (0.0, 0.02), n=81, zooms=8)
    # The optimizer must be at least as good as the grid and agree with it.
    assert null.log_likelihood >= ll_g - 1e-4
    assert abs(null.log_likelihood - ll_g) <= 1e-4
    assert null.nu == pytest.approx(nu_g, abs=1e-3)
    assert null.sigma2 == pytest.approx(s2_g, abs=1e-3)


def test_rejects_positive_controls():
    cs = ControlSet([ControlRecord("db", "T", "C", "O", "F", 2.0, 0.7, 0.1)], "db")
    with pytest.raises(ValidationError):
        fit_null(cs)


def test_order_and_duplication_invariance(thousand_negatives):
    est, se = thousand_negatives
    est, se = est[:200], se[:200]
    base = fit_null_arrays(est, se)
    perm = np.random.default_rng(1).permutation(200)
    shuffled = fit_null_arrays(est[perm], se[perm])
    doubled = fit_null_arrays(np.tile(est, 2), np.tile(se, 2))
    for other in (shuffled, doubled):
        assert other.nu == pytest.approx(base.nu, abs=1e-6)
        assert other.sigma2 == pytest.approx(base.sigma2, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(
    est=st.floats(-2, 2), se=st.floats(0.02, 1), nu=st.floats(-1, 1), s2=st.floats(1e-3, 0.5)
)
def test_closed_form_marginal_matches_quadrature(est, se, nu, s2):
    closed = null_log_likelihood(nu, s2, np.array([est]), np.array([se]))
    numeric = oracles.marginal_loglik_by_quadrature(est, se, nu, s2)
    assert closed == pytest.approx(numeric, abs=1e-7)


def test_traditional_p_value_at_normal_quantile():
    null = NullDistribution(0.0, 0.0)
    for se in (0.05, 0.3, 2.0):
        assert calibrated_p(null, 1.959964 * se, se) == pytest.approx(0.05, abs=1e-6)


def test_p_value_against_high_precision_oracle():
    null = NullDistribution(0.1, 0.04)
    expected = oracles.two_sided_p_mp(0.4 / math.sqrt(0.08))
    assert calibrated_p(null, 0.5, 0.2) == pytest.approx(expected, rel=1e-12)


def test_p_value_one_at_null_centre():
    assert calibrated_p(NullDistribution(0.3, 0.02), 0.3, 0.1) == 1.0


def test_one_sided_alternatives_sum_to_one():
    null = NullDistribution(0.1, 0.02)
    g = calibrated_p(null, 0.4, 0.1, alternative="greater")
    l = calibrated_p(null, 0.4, 0.1, alternative="less")
    assert g + l == pytest.approx(1.0)
    assert g < 0.5


def test_p_value_rejects_nonpositive_se():
    with pytest.raises(ValidationError):
        calibrated_p(NullDistribution(0, 0), 0.1, 0.0)


@settings(max_examples=60, deadline=None)
@given(
    nu=st.floats(-1, 1), s2=st.floats(0, 0.5), se=st.floats(0.01, 1),
    d1=st.floats(0, 3), d2=st.floats(0, 3),
)
def test_p_value_monotone_in_distance(nu, s2, se, d1, d2):
    null = NullDistribution(nu, s2)
    near, far = sorted((d1, d2))
    assert calibrated_p(null, nu + far, se) <= calibrated_p(null, nu + near, se)
    assert calibrated_p(null, nu - far, se) <= calibrated_p(null, nu - near, se)
