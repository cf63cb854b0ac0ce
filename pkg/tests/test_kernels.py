import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nscov.kernels import (
    NU_CEILING,
    AnisotropyCoefficients,
    LocalKernel,
    SmoothnessBounds,
    TaperSpec,
    kernel_eigen,
    kernel_matrix,
    kernel_params,
    matern_correlation,
    nonstationary_covariance,
    nu_fn,
    prefactor,
    q_distance,
    sigma_fn,
    taper_correlation,
)

# Half-integer closed forms, used as the oracle for the Bessel-based path.


def matern_closed(t, nu):
    if nu == 0.5:
        return np.exp(-t)
    if nu == 1.5:
        return (1.0 + t) * np.exp(-t)
    if nu == 2.5:
        return (1.0 + t + t * t / 3.0) * np.exp(-t)
    raise ValueError(nu)


def test_matern_exponential_case():
    # nu = 1/2 with the sqrt(8 nu) argument: exp(-2 h / gamma)
    assert matern_correlation(1.0, 1.0, 0.5) == pytest.approx(
        math.exp(-2.0), abs=1e-15)


def test_matern_nu_three_halves():
    t = math.sqrt(12.0)
    expect = (1.0 + t) * math.exp(-t)
    assert matern_correlation(1.0, 1.0, 1.5) == pytest.approx(expect, abs=1e-14)


def test_matern_at_zero_is_exactly_one():
    assert matern_correlation(0.0, 1.0, 0.73) == 1.0
    assert matern_correlation(0.0, 2.0, 2.2) == 1.0


def test_matern_against_closed_forms():
    h = np.array([0.01, 0.05, 0.3, 1.0, 2.7, 6.0])
    for nu in (0.5, 1.5, 2.5):
        got = matern_correlation(h, 1.3, nu)
        t = math.sqrt(8.0 * nu) * h / 1.3
        npt.assert_allclose(got, matern_closed(t, nu), rtol=1e-12)


def test_matern_without_sqrt8nu_factor():
    got = matern_correlation(2.0, 1.0, 0.5, sqrt8nu=False)
    assert got == pytest.approx(math.exp(-2.0), abs=1e-15)


def test_matern_large_argument_underflows_to_zero():
    assert matern_correlation(1e6, 1.0, 1.0) == 0.0


def test_matern_large_nu_small_argument_stays_bounded():
    # Bessel overflow near zero argument must resolve to the limit 1
    val = matern_correlation(1e-12, 1.0, 49.0)
    assert 0.0 <= val <= 1.0
    assert val == pytest.approx(1.0, abs=1e-6)


def test_matern_rejects_nu_above_ceiling():
    with pytest.raises(ValueError):
        matern_correlation(1.0, 1.0, NU_CEILING + 1.0)


@given(st.floats(1e-6, 30.0), st.floats(0.01, NU_CEILING))
@settings(max_examples=200, deadline=None)
def test_matern_in_unit_interval(h, nu):
    val = float(matern_correlation(h, 1.0, nu))
    assert 0.0 <= val <= 1.0


def test_nu_fn_logistic_value():
    # eta = 1 between bounds (0.5, 2.0): 1.5 / (1 + e^-1) + 0.5
    got = nu_fn(np.array([1.0]), np.array([1.0]), SmoothnessBounds(0.5, 2.0))
    assert got == pytest.approx(1.5965878679450074, abs=1e-12)


def test_nu_fn_zero_predictor_is_midpoint():
    got = nu_fn(np.array([1.0]), np.array([0.0]), SmoothnessBounds(0.5, 2.5))
    assert got == pytest.approx(1.5, abs=1e-12)


def test_nu_fn_saturates_inside_bounds():
    b = SmoothnessBounds(0.5, 2.5)
    lo = nu_fn(np.array([1.0]), np.array([-200.0]), b)
    hi = nu_fn(np.array([1.0]), np.array([200.0]), b)
    assert b.nu_min <= lo < b.nu_max
    assert b.nu_min < hi <= b.nu_max
    assert lo == pytest.approx(0.5, abs=1e-12)
    assert hi == pytest.approx(2.5, abs=1e-12)


def test_smoothness_bounds_reject_ceiling_violation():
    with pytest.raises(ValueError):
        SmoothnessBounds(0.5, NU_CEILING + 10.0)


def test_sigma_fn():
    got = sigma_fn(np.array([1.0, 2.0]), np.array([0.4, 0.3]))
    assert got == pytest.approx(math.exp(0.5 * 1.0), abs=1e-14)


def coeffs_for(rho, r, omega):
    """Intercept-only coefficients that hit (rho, r, omega) exactly."""
    theta_ms = np.array([math.log(rho)])
    theta_ga = np.array([math.log(r)])
    # omega = pi * logistic(eta)  =>  eta = logit(omega / pi)
    p = omega / math.pi
    theta_tt = np.array([math.log(p / (1.0 - p))])
    return AnisotropyCoefficients(theta_ms, theta_ga, theta_tt)


def test_kernel_params_roundtrip():
    c = coeffs_for(1.3, 2.0, math.pi / 3)
    rho, r, omega = kernel_params(np.array([1.0]), c)
    assert rho == pytest.approx(1.3, rel=1e-12)
    assert r == pytest.approx(2.0, rel=1e-12)
    assert omega == pytest.approx(math.pi / 3, rel=1e-12)


def test_kernel_matrix_value():
    # rho=1, r=2, omega=pi/3: off-diagonal r cos(omega) = 1
    S = kernel_matrix(np.array([1.0]), coeffs_for(1.0, 2.0, math.pi / 3))
    npt.assert_allclose(S, [[1.0, 1.0], [1.0, 4.0]], atol=1e-12)


def test_kernel_matrix_disabled_components():
    # empty theta_ga / theta_tt: r = 1 and omega = pi/2, so Sigma = rho^2 I
    c = AnisotropyCoefficients(np.array([math.log(1.7)]), np.zeros(0),
                               np.zeros(0))
    S = kernel_matrix(np.array([1.0]), c)
    npt.assert_allclose(S, 1.7 ** 2 * np.eye(2), rtol=1e-12, atol=1e-15)


def test_kernel_eigen_closed_form_values():
    # rho=1, r=2, omega=pi/3: (5 +- sqrt(13)) / 2
    vals, vecs, rot = kernel_eigen(1.0, 2.0, math.pi / 3)
    expect = np.array([(5 + math.sqrt(13)) / 2, (5 - math.sqrt(13)) / 2])
    npt.assert_allclose(vals, expect, atol=1e-12)
    npt.assert_allclose(vals, [4.302775637731995, 0.6972243622680052],
                        atol=1e-10)


def test_kernel_eigen_right_angle_case():
    # omega = pi/2 with rho=2, r=3: Sigma = diag(4, 36)
    vals, vecs, rot = kernel_eigen(2.0, 3.0, math.pi / 2)
    npt.assert_allclose(vals, [36.0, 4.0], atol=1e-10)
    # dominant axis is the second coordinate
    assert abs(vecs[1, 0]) == pytest.approx(1.0, abs=1e-10)


def test_kernel_eigen_isotropic_case():
    vals, vecs, rot = kernel_eigen(1.5, 1.0, math.pi / 2)
    npt.assert_allclose(vals, [2.25, 2.25], atol=1e-12)


def test_kernel_eigen_matches_generic_solver_on_grid():
    rs = np.linspace(0.2, 5.0, 20)
    omegas = np.linspace(0.05, math.pi - 0.05, 20)
    for r in rs:
        for omega in omegas:
            S = np.array([
                [1.0, r * math.cos(omega)],
                [r * math.cos(omega), r * r],
            ])
            ref = np.linalg.eigvalsh(S)[::-1]
            vals, vecs, rot = kernel_eigen(1.0, r, omega)
            npt.assert_allclose(vals, ref, atol=1e-10)
            # eigenvectors up to sign
            for j in range(2):
                resid = S @ vecs[:, j] - vals[j] * vecs[:, j]
                assert np.abs(resid).max() < 1e-10


def test_prefactor_identity_pair_is_one():
    S = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert prefactor(S, S) == pytest.approx(1.0, abs=1e-14)


def test_prefactor_unequal_scalars():
    assert prefactor(np.eye(2), 4.0 * np.eye(2)) == pytest.approx(0.8,
                                                                  abs=1e-14)


def test_prefactor_one_to_ten_ratio():
    got = prefactor(0.02 * np.eye(2), 0.2 * np.eye(2))
    assert got == pytest.approx(2.0 * math.sqrt(10.0) / 11.0, abs=1e-12)


@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0), st.floats(-0.9, 0.9),
       st.floats(-0.9, 0.9))
@settings(max_examples=150, deadline=None)
def test_prefactor_at_most_one(la, lb, ca, cb):
    # random SPD pairs via log-scales and correlations
    Sa = math.exp(la) * np.array([[1.0, ca], [ca, 1.0]])
    Sb = math.exp(lb) * np.array([[1.0, cb], [cb, 1.0]])
    assert prefactor(Sa, Sb) <= 1.0 + 1e-12


def test_q_distance_unit_case():
    q = q_distance(np.array([1.0, 0.0]), np.array([0.0, 0.0]),
                   np.eye(2), np.eye(2))
    assert q == pytest.approx(1.0, abs=1e-14)


def test_q_distance_symmetric_and_scales():
    si = np.array([0.3, 0.8])
    sj = np.array([0.9, 0.1])
    Si = np.array([[1.0, 0.2], [0.2, 0.5]])
    Sj = np.array([[2.0, -0.1], [-0.1, 1.0]])
    assert q_distance(si, sj, Si, Sj) == pytest.approx(
        q_distance(sj, si, Sj, Si), rel=1e-14)
    # doubling both kernels halves the quadratic form
    assert q_distance(si, sj, 2 * Si, 2 * Sj) == pytest.approx(
        0.5 * q_distance(si, sj, Si, Sj), rel=1e-12)


def test_taper_values_at_half_support():
    sph = TaperSpec("spherical", 1.0)
    w1 = TaperSpec("wendland1", 1.0)
    w2 = TaperSpec("wendland2", 1.0)
    assert taper_correlation(0.5, sph) == pytest.approx(0.3125, abs=1e-14)
    assert taper_correlation(0.5, w1) == pytest.approx(0.1875, abs=1e-14)
    assert taper_correlation(0.5, w2) == pytest.approx(
        0.5 ** 6 * ((35.0 / 3.0) * 0.25 + 3.0 + 1.0), abs=1e-14)


def test_taper_support_boundaries():
    for fam in ("spherical", "wendland1", "wendland2"):
        spec = TaperSpec(fam, 0.7)
        assert taper_correlation(0.0, spec) == 1.0
        assert taper_correlation(0.7, spec) == 0.0
        assert taper_correlation(5.0, spec) == 0.0


def test_taper_none_is_constant_one():
    spec = TaperSpec(None)
    npt.assert_array_equal(taper_correlation(np.array([0.0, 2.0, 9.9]), spec),
                           1.0)


def test_taper_nonincreasing_on_support():
    h = np.linspace(0.0, 1.0, 301)
    for fam in ("spherical", "wendland1", "wendland2"):
        vals = taper_correlation(h, TaperSpec(fam, 1.0))
        assert np.all(np.diff(vals) <= 1e-15)


def test_taper_spec_validation():
    with pytest.raises(ValueError):
        TaperSpec("spherical", -1.0)
    with pytest.raises(ValueError):
        TaperSpec("spherical", None)
    with pytest.raises(ValueError):
        TaperSpec("triangular", 1.0)
    assert TaperSpec("none").enabled is False


def test_local_kernel_validation():
    with pytest.raises(ValueError):
        LocalKernel(1.0, np.array([[1.0, 2.0], [2.0, 1.0]]), 1.0)  # indefinite
    with pytest.raises(ValueError):
        LocalKernel(-1.0, np.eye(2), 1.0)
    with pytest.raises(ValueError):
        LocalKernel(1.0, np.eye(2), NU_CEILING + 1.0)


def test_nonstationary_covariance_collapses_to_matern():
    # equal kernels: prefactor 1 and Q = h^2 / kappa
    kern = LocalKernel(1.2, 0.3 * np.eye(2), 1.0)
    si = np.array([0.1, 0.2])
    sj = np.array([0.5, 0.6])
    h = np.linalg.norm(si - sj)
    got = nonstationary_covariance(si, sj, kern, kern)
    expect = 1.2 ** 2 * matern_correlation(h / math.sqrt(0.3), 1.0, 1.0)
    assert got == pytest.approx(float(expect), rel=1e-12)


def test_nonstationary_covariance_smoothness_combination():
    # combined order sqrt(nu_i nu_j) never exceeds the arithmetic mean
    kern_a = LocalKernel(1.0, np.eye(2), 0.6)
    kern_b = LocalKernel(1.0, np.eye(2), 2.4)
    nubar = math.sqrt(0.6 * 2.4)
    assert nubar <= 0.5 * (0.6 + 2.4)
    si = np.zeros(2)
    sj = np.array([0.4, 0.0])
    got = nonstationary_covariance(si, sj, kern_a, kern_b)
    expect = matern_correlation(0.4, 1.0, nubar)
    assert got == pytest.approx(float(expect), rel=1e-12)


@given(st.floats(0.1, 10.0), st.floats(0.1, 10.0))
@settings(max_examples=100, deadline=None)
def test_geometric_mean_below_arithmetic(nu_i, nu_j):
    assert math.sqrt(nu_i * nu_j) <= 0.5 * (nu_i + nu_j) + 1e-12


def test_omega_clamped_away_from_degeneracy():
    # saturating tilt predictors keep omega strictly inside (0, pi)
    c_lo = AnisotropyCoefficients(np.zeros(1), np.zeros(1),
                                  np.array([-1e3]))
    c_hi = AnisotropyCoefficients(np.zeros(1), np.zeros(1),
                                  np.array([1e3]))
    _, _, w_lo = kernel_params(np.array([1.0]), c_lo)
    _, _, w_hi = kernel_params(np.array([1.0]), c_hi)
    assert 0.0 < w_lo < w_hi < math.pi
    S = kernel_matrix(np.array([1.0]), c_hi)
    assert np.linalg.det(S) > 0.0


def test_kernel_matrix_rejects_nonfinite_covariates():
    c = AnisotropyCoefficients(np.zeros(1), np.zeros(0), np.zeros(0))
    with pytest.raises(ValueError):
        kernel_matrix(np.array([np.nan]), c)
