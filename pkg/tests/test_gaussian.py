"""Unit tests for the Gaussian closed forms and Monte Carlo checks.

Oracles: the defining fixed-point equation for the correlation parameter,
textbook quadratic-Gaussian limits, and direct sample statistics.
"""

import math

import numpy as np
import pytest

from rdplab.gaussian import (
    aux_b,
    conditional_gaussian,
    mc_verify_bivariate,
    rate_bivariate,
    rate_normal,
    rho_residual,
    solve_rho,
    standard_normals,
    ui_bound,
)


GRID = [round(0.05 * k, 10) for k in range(1, 40)]  # 39 points in (0, 2)


def test_solve_rho_satisfies_fixed_point():
    for delta in GRID:
        for rc in (0.0, 0.25, 1.0, 3.0, math.inf):
            rho = solve_rho(delta, rc)
            assert 0.0 <= rho <= 1.0
            assert abs(rho_residual(rho, delta, rc)) < 1e-12


def test_solve_rho_closed_form_endpoints():
    # no common randomness: 1 - delta/2 = rho * sqrt(1 - (1 - rho^2)) = rho^2
    for delta in GRID:
        assert solve_rho(delta, 0.0) == pytest.approx(
            math.sqrt(1 - delta / 2), abs=1e-13
        )
        # unlimited common randomness: rho = 1 - delta/2
        assert solve_rho(delta, math.inf) == pytest.approx(1 - delta / 2, abs=1e-13)


def test_rate_normal_endpoint_formulas():
    for delta in GRID:
        # zero common randomness: (1/2) log2(2/delta)
        assert rate_normal(delta, 0.0) == pytest.approx(
            0.5 * math.log2(2.0 / delta), abs=1e-12
        )
        # unlimited common randomness: (1/2) log2(1 / (delta (1 - delta/4)))
        assert rate_normal(delta, math.inf) == pytest.approx(
            0.5 * math.log2(1.0 / (delta * (1 - delta / 4))), abs=1e-12
        )


def test_rate_normal_monotone_in_rc():
    for delta in (0.2, 0.8, 1.5):
        rates = [rate_normal(delta, rc) for rc in (0.0, 0.1, 0.5, 2.0, math.inf)]
        assert all(a >= b - 1e-12 for a, b in zip(rates, rates[1:]))


def test_perfect_realism_premium_is_half_bit():
    # exactly half a bit above the classical (realism-free) rate at rc = 0
    for delta in [d for d in GRID if d <= 1.0]:
        classical = 0.5 * math.log2(1.0 / delta)
        assert rate_normal(delta, 0.0) - classical == pytest.approx(0.5, abs=1e-13)


def test_rate_bivariate_reduces_to_no_side_info():
    # uncorrelated side information is worthless but unlimited common
    # randomness is implicit in the two-terminal form
    for delta in GRID:
        assert rate_bivariate(delta, 0.0) == pytest.approx(
            rate_normal(delta, math.inf), abs=1e-12
        )


def test_rate_bivariate_zero_at_boundary():
    for eta in (0.25, -0.25, 0.5, -0.5, 0.9, -0.9):
        dmax = 2.0 - 2.0 * abs(eta)
        assert rate_bivariate(dmax, eta) == pytest.approx(0.0, abs=1e-12)
        # interior deltas give positive rate
        assert rate_bivariate(0.5 * dmax, eta) > 0.0


def test_aux_b_consistency():
    # with no side correlation the auxiliary carries all the correlation
    for rho in (0.2, 0.6, 0.95):
        assert aux_b(rho, 0.0) == pytest.approx(rho, abs=1e-13)
    # at the boundary (rho = |eta|) the side information suffices on its own
    for eta in (0.3, 0.7, -0.6):
        assert aux_b(abs(eta), eta) == pytest.approx(0.0, abs=1e-9)


def test_conditional_gaussian_matches_manual():
    cov = np.array([[1.0, 0.6, 0.3], [0.6, 1.0, 0.2], [0.3, 0.2, 1.0]])
    mean = np.zeros(3)
    m, c = conditional_gaussian(mean, cov, observed_idx=[2], observed_values=[1.5])
    # manual Schur complement against coordinate 2
    s = cov[:2, 2] / cov[2, 2]
    np.testing.assert_allclose(m, s * 1.5, atol=1e-12)
    np.testing.assert_allclose(
        c, cov[:2, :2] - np.outer(cov[:2, 2], cov[:2, 2]) / cov[2, 2], atol=1e-12
    )


def test_standard_normals_deterministic_and_standard():
    a = standard_normals(seed=5, stream=2, count=50_000)
    b = standard_normals(seed=5, stream=2, count=50_000)
    np.testing.assert_array_equal(a, b)
    c = standard_normals(seed=5, stream=3, count=50_000)
    assert not np.array_equal(a, c)
    assert abs(a.mean()) < 0.02
    assert abs(a.var() - 1.0) < 0.02


def test_mc_verify_moderate_sample():
    out = mc_verify_bivariate(eta=0.5, delta=1.0, n_samples=200_000, seed=1)
    rho = 1.0 - 1.0 / 2.0
    assert out["est_rho2"] == pytest.approx(rho**2, abs=0.01)
    assert out["est_distortion"] == pytest.approx(1.0, abs=0.02)
    assert out["est_eta"] == pytest.approx(0.5, abs=0.01)
    assert out["exact_rate"] == pytest.approx(rate_bivariate(1.0, 0.5), abs=1e-12)


def test_ui_bound_formula():
    assert ui_bound(0.01, 3.0) == pytest.approx(4.0 * math.sqrt(0.03), abs=1e-13)
    assert ui_bound(0.0, 3.0) == 0.0
