"""Local kernels and nonstationary covariance evaluation.

The covariance model combines three spatially-varying ingredients, each driven
by a linear predictor in (standardized) covariates x:

* marginal standard deviation   sigma(x; alpha) = exp(0.5 * x'alpha)
* a 2x2 kernel matrix           Sigma(x; theta) = rho^2 * [[1,        r cos w],
                                                           [r cos w,  r^2    ]]
  with rho = exp(x'theta_ms), r = exp(x'theta_ga),
  w = pi * inv_logit(x'theta_tt), so det Sigma = rho^4 r^2 sin^2 w > 0
* bounded smoothness            nu(x; zeta) in (nu_min, nu_max), logistic in
                                x'zeta

The covariance between two locations s_i, s_j with local kernels
(sigma_i, Sigma_i, nu_i) and (sigma_j, Sigma_j, nu_j) is

    C(s_i, s_j) = sigma_i sigma_j
                  * |Sigma_i|^(1/4) |Sigma_j|^(1/4) / |(Sigma_i+Sigma_j)/2|^(1/2)
                  * M_nubar( sqrt(Q_ij) )

where Q_ij = (s_i-s_j)' ((Sigma_i+Sigma_j)/2)^(-1) (s_i-s_j) is an anisotropic
squared distance, nubar = sqrt(nu_i nu_j), and M_nu is the Matern correlation
evaluated at unit scale: all distance scaling is carried by Q. The determinant
ratio (the "prefactor") is at most 1 and caps the attainable correlation
between locations with discrepant kernels.

A scalar isotropic variant takes Sigma_l = rho_l * I, collapsing the prefactor
to 2 sqrt(rho_i rho_j) / (rho_i + rho_j) and the distance to
h / sqrt((rho_i+rho_j)/2). It is the form used under covariance tapering; note
that there the scalar rho_l plays the role of a squared length scale.

Compactly supported taper correlations (spherical, Wendland) are provided for
sparsifying covariance matrices by elementwise multiplication.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln, kv

__all__ = [
    "NU_CEILING",
    "OMEGA_MARGIN",
    "TAPER_FAMILIES",
    "LocalKernel",
    "SmoothnessBounds",
    "TaperSpec",
    "AnisotropyCoefficients",
    "matern_correlation",
    "nu_fn",
    "sigma_fn",
    "kernel_params",
    "kernel_matrix",
    "kernel_eigen",
    "prefactor",
    "q_distance",
    "nonstationary_covariance",
    "isotropic_covariance",
    "taper_correlation",
]

# Smoothness values above this would overflow the Bessel evaluation long
# before they are statistically distinguishable from a squared-exponential.
NU_CEILING = 50.0

# The tilt angle w is kept inside [OMEGA_MARGIN*pi, (1-OMEGA_MARGIN)*pi] so the
# kernel matrix never degenerates (det ~ sin^2 w).
OMEGA_MARGIN = 1e-6

TAPER_FAMILIES = ("spherical", "wendland1", "wendland2")

_LOG2 = math.log(2.0)
_ARG_HUGE = 1000.0  # Matern argument beyond which the correlation underflows


@dataclass(frozen=True)
class SmoothnessBounds:
    """Lower and upper bounds for the spatially-varying smoothness."""

    nu_min: float
    nu_max: float

    def __post_init__(self):
        if not (0.0 < self.nu_min <= self.nu_max < math.inf):
            raise ValueError(
                f"smoothness bounds must satisfy 0 < nu_min <= nu_max, got "
                f"({self.nu_min}, {self.nu_max})"
            )
        if self.nu_max > NU_CEILING:
            raise ValueError(f"nu_max {self.nu_max} exceeds ceiling {NU_CEILING}")


@dataclass(frozen=True)
class TaperSpec:
    """Compactly supported taper choice.

    family is one of 'spherical', 'wendland1', 'wendland2', or None for no
    tapering. delta is the support radius in coordinate units and must be
    positive whenever a family is set.
    """

    family: Optional[str]
    delta: Optional[float] = None

    def __post_init__(self):
        fam = self.family
        if fam is not None:
            fam = fam.lower()
            if fam in ("none", ""):
                fam = None
            object.__setattr__(self, "family", fam)
        if fam is None:
            return
        if fam not in TAPER_FAMILIES:
            raise ValueError(f"unknown taper family {self.family!r}")
        if self.delta is None or not np.isfinite(self.delta) or self.delta <= 0:
            raise ValueError("taper delta must be a positive finite number")

    @property
    def enabled(self) -> bool:
        return self.family is not None


@dataclass(frozen=True)
class AnisotropyCoefficients:
    """Coefficient vectors for main scale, geometric anisotropy, and tilt.

    Each vector acts on the covariate vector (intercept first) assigned to its
    component. theta_ga or theta_tt of length 0 mean the component is disabled
    (r = 1, w = pi/2 respectively).
    """

    theta_ms: np.ndarray
    theta_ga: np.ndarray
    theta_tt: np.ndarray

    def __post_init__(self):
        for name in ("theta_ms", "theta_ga", "theta_tt"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if v.ndim != 1 or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be a finite 1-d coefficient vector")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class LocalKernel:
    """Per-location (sigma, Sigma, nu) triple.

    sigma: marginal standard deviation, in response units.
    Sigma: 2x2 symmetric positive-definite kernel matrix, squared-distance units.
    nu: smoothness, dimensionless.
    """

    sigma: float
    Sigma: np.ndarray
    nu: float

    def __post_init__(self):
        S = np.asarray(self.Sigma, dtype=float)
        if S.shape != (2, 2):
            raise ValueError("Sigma must be a 2x2 matrix")
        if not np.all(np.isfinite(S)) or abs(S[0, 1] - S[1, 0]) > 1e-12 * (
            1.0 + abs(S[0, 1])
        ):
            raise ValueError("Sigma must be finite and symmetric")
        if S[0, 0] <= 0 or S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0] <= 0:
            raise ValueError("Sigma must be positive definite")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("sigma must be positive")
        if not (0.0 < self.nu <= NU_CEILING):
            raise ValueError(f"nu must lie in (0, {NU_CEILING}]")
        object.__setattr__(self, "Sigma", S)


def _matern_shape(arg, nu):
    """Matern correlation as a function of its already-scaled argument.

    Both arguments broadcast. Values are exact 1 at arg == 0 and exact 0 once
    the correlation underflows; intermediate overflow of the Bessel factor at
    tiny arguments (large nu) is resolved to the limiting value 1.
    """
    arg = np.asarray(arg, dtype=float)
    nu_b = np.broadcast_to(np.asarray(nu, dtype=float), arg.shape)
    out = np.ones(arg.shape, dtype=float)
    mask = (arg > 0) & (arg <= _ARG_HUGE)
    if np.any(mask):
        a = arg[mask]
        n = nu_b[mask]
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            val = np.exp((1.0 - n) * _LOG2 - gammaln(n) + n * np.log(a)) * kv(n, a)
        bad = ~np.isfinite(val)
        if np.any(bad):
            # Bessel overflow happens only in the arg -> 0 limit, where the
            # correlation tends to 1; underflow products at large arg are 0.
            val[bad] = np.where(a[bad] < 1.0, 1.0, 0.0)
        out[mask] = val
    out[arg > _ARG_HUGE] = 0.0
    return out


def matern_correlation(h, gamma=1.0, nu=0.5, sqrt8nu=True):
    """Matern correlation M_nu(h / gamma).

    Parameters
    ----------
    h : nonnegative distance (scalar or array).
    gamma : positive scale.
    nu : smoothness in (0, NU_CEILING].
    sqrt8nu : if True (default) the argument is sqrt(8 nu) h / gamma, which
        makes gamma the distance at which the correlation is roughly 0.1
        across nu; if False the raw argument h / gamma is used.

    Returns values in (0, 1], equal to 1 at h = 0.
    """
    h_arr = np.asarray(h, dtype=float)
    nu_arr = np.asarray(nu, dtype=float)
    if not np.all(np.isfinite(h_arr)) or np.any(h_arr < 0):
        raise ValueError("h must be finite and nonnegative")
    if not np.isfinite(gamma) or gamma <= 0:
        raise ValueError("gamma must be positive and finite")
    if not np.all(np.isfinite(nu_arr)) or np.any(nu_arr <= 0):
        raise ValueError("nu must be positive and finite")
    if np.any(nu_arr > NU_CEILING):
        raise ValueError(f"nu exceeds the implementation ceiling {NU_CEILING}")
    arg = h_arr / gamma
    if sqrt8nu:
        arg = np.sqrt(8.0 * nu_arr) * arg
    out = _matern_shape(arg, nu_arr)
    if np.isscalar(h) and out.ndim == 0:
        return float(out)
    return out


def nu_fn(x, zeta, bounds: SmoothnessBounds) -> float:
    """Spatially-varying smoothness: logistic in x'zeta, valued strictly
    inside (nu_min, nu_max) for finite predictors."""
    x = np.asarray(x, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    if x.shape != zeta.shape:
        raise ValueError("x and zeta must have matching length")
    return float(nu_from_eta(float(x @ zeta), bounds))


def nu_from_eta(eta, bounds: SmoothnessBounds):
    """Smoothness from the linear predictor eta = x'zeta (vectorized)."""
    eta = np.asarray(eta, dtype=float)
    # logistic evaluated in a saturating, overflow-free form
    w = np.empty_like(eta)
    pos = eta >= 0
    w[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    w[~pos] = e / (1.0 + e)
    return (bounds.nu_max - bounds.nu_min) * w + bounds.nu_min


def sigma_fn(x, alpha) -> float:
    """Marginal standard deviation exp(0.5 x'alpha)."""
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if x.shape != alpha.shape:
        raise ValueError("x and alpha must have matching length")
    return float(np.exp(0.5 * float(x @ alpha)))


def _clamp_omega(omega):
    lo = OMEGA_MARGIN * math.pi
    hi = (1.0 - OMEGA_MARGIN) * math.pi
    return np.clip(omega, lo, hi)


def kernel_params(x, coeffs: AnisotropyCoefficients, x_ga=None, x_tt=None):
    """Evaluate (rho, r, omega) from covariates and coefficients.

    x is the covariate vector for the main-scale component; x_ga and x_tt
    default to x and may differ when the components use different covariate
    lists. Disabled components (empty coefficient vectors) give r = 1 and
    omega = pi/2. omega is clamped away from the degenerate values 0 and pi.
    """
    x = np.asarray(x, dtype=float)
    rho = float(np.exp(x @ coeffs.theta_ms))
    if coeffs.theta_ga.size:
        xg = x if x_ga is None else np.asarray(x_ga, dtype=float)
        r = float(np.exp(xg @ coeffs.theta_ga))
    else:
        r = 1.0
    if coeffs.theta_tt.size:
        xt = x if x_tt is None else np.asarray(x_tt, dtype=float)
        eta = float(xt @ coeffs.theta_tt)
        omega = math.pi / (1.0 + math.exp(-eta)) if eta >= 0 else (
            math.pi * math.exp(eta) / (1.0 + math.exp(eta))
        )
    else:
        omega = 0.5 * math.pi
    return rho, r, float(_clamp_omega(omega))


def _matrix_from_params(rho, r, omega):
    c = math.cos(omega)
    return rho**2 * np.array([[1.0, r * c], [r * c, r * r]])


def kernel_matrix(x, coeffs: AnisotropyCoefficients, x_ga=None, x_tt=None):
    """2x2 kernel matrix rho^2 [[1, r cos w], [r cos w, r^2]].

    det = rho^4 r^2 sin^2 w is positive because omega is clamped inside
    (0, pi).
    """
    if not np.all(np.isfinite(np.asarray(x, dtype=float))):
        raise ValueError("covariates must be finite")
    rho, r, omega = kernel_params(x, coeffs, x_ga=x_ga, x_tt=x_tt)
    return _matrix_from_params(rho, r, omega)


def kernel_eigen(rho: float, r: float, omega: float):
    """Closed-form eigendecomposition of the kernel matrix.

    Returns (eigenvalues, eigenvectors, rotation) with eigenvalues in
    decreasing order,

        e_{1,2} = (rho^2 / 2) [ (r^2+1) +- sqrt((r^2+1)^2 - 4 r^2 sin^2 w) ],

    eigenvectors (unit length, as columns, up to sign) proportional to
    (2 r cos w, r^2 - 1 +- A), and the rotation angle of the dominant axis
    arctan((r^2 - 1 + A) / (2 r cos w)).

    When r = 1 the eigenvalues reduce to rho^2 (1 +- |cos w|); when w = pi/2
    the matrix is diagonal with entries (rho^2, rho^2 r^2).
    """
    if not (np.isfinite(rho) and rho > 0 and np.isfinite(r) and r > 0):
        raise ValueError("rho and r must be positive and finite")
    lo = OMEGA_MARGIN * math.pi
    hi = (1.0 - OMEGA_MARGIN) * math.pi
    if not (lo <= omega <= hi):
        raise ValueError(f"omega {omega} is outside the nondegenerate range "
                         f"[{lo:.3e}, {hi:.6f}]")
    r2 = r * r
    tr = r2 + 1.0
    A = math.sqrt(max(tr * tr - 4.0 * r2 * math.sin(omega) ** 2, 0.0))
    e1 = 0.5 * rho**2 * (tr + A)
    e2 = 0.5 * rho**2 * (tr - A)
    den = 2.0 * r * math.cos(omega)
    v1 = np.array([den, r2 - 1.0 + A])
    v2 = np.array([den, r2 - 1.0 - A])
    tiny = 1e-13 * tr
    n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
    if n1 <= tiny and n2 <= tiny:
        v1 = np.array([1.0, 0.0])
        v2 = np.array([0.0, 1.0])
    elif n1 <= tiny:
        v2 = v2 / n2
        v1 = np.array([v2[1], -v2[0]])
    elif n2 <= tiny:
        v1 = v1 / n1
        v2 = np.array([-v1[1], v1[0]])
    else:
        v1 = v1 / n1
        v2 = v2 / n2
    num = r2 - 1.0 + A
    if den == 0.0:
        rotation = 0.0 if abs(num) <= tiny else 0.5 * math.pi
    else:
        rotation = math.atan(num / den)
    return np.array([e1, e2]), np.column_stack([v1, v2]), rotation


def _det2(S):
    return S[..., 0, 0] * S[..., 1, 1] - S[..., 0, 1] * S[..., 1, 0]


def _check_spd2(S, name):
    S = np.asarray(S, dtype=float)
    if S.shape != (2, 2):
        raise ValueError(f"{name} must be 2x2")
    if not np.all(np.isfinite(S)):
        raise ValueError(f"{name} must be finite")
    if S[0, 0] <= 0 or _det2(S) <= 0:
        raise ValueError(f"{name} must be symmetric positive definite")
    return S


def prefactor(Sigma_i, Sigma_j) -> float:
    """Determinant ratio |Si|^(1/4) |Sj|^(1/4) / |(Si+Sj)/2|^(1/2) in (0, 1].

    Equals 1 when the kernels agree; a value below 1 caps the correlation
    attainable between the two locations. Clamped at 1 against roundoff.
    """
    Si = _check_spd2(Sigma_i, "Sigma_i")
    Sj = _check_spd2(Sigma_j, "Sigma_j")
    avg_det = _det2(0.5 * (Si + Sj))
    val = (_det2(Si) * _det2(Sj)) ** 0.25 / math.sqrt(avg_det)
    return min(float(val), 1.0)


def q_distance(s_i, s_j, Sigma_i, Sigma_j) -> float:
    """Anisotropic squared distance Q = ds' ((Si+Sj)/2)^(-1) ds."""
    Si = _check_spd2(Sigma_i, "Sigma_i")
    Sj = _check_spd2(Sigma_j, "Sigma_j")
    ds = np.asarray(s_i, dtype=float) - np.asarray(s_j, dtype=float)
    if ds.shape != (2,):
        raise ValueError("locations must be length-2 coordinate vectors")
    avg = 0.5 * (Si + Sj)
    det = _det2(avg)
    if not np.isfinite(det) or det <= 0:
        raise ValueError("average kernel matrix is singular")
    q = (avg[1, 1] * ds[0] * ds[0] - 2.0 * avg[0, 1] * ds[0] * ds[1]
         + avg[0, 0] * ds[1] * ds[1]) / det
    return float(max(q, 0.0))


def nonstationary_covariance(s_i, s_j, kern_i: LocalKernel, kern_j: LocalKernel,
                             sqrt8nu=True) -> float:
    """Covariance between two locations under their local kernels."""
    pref = prefactor(kern_i.Sigma, kern_j.Sigma)
    q = q_distance(s_i, s_j, kern_i.Sigma, kern_j.Sigma)
    nubar = math.sqrt(kern_i.nu * kern_j.nu)
    corr = matern_correlation(math.sqrt(q), 1.0, nubar, sqrt8nu=sqrt8nu)
    return kern_i.sigma * kern_j.sigma * pref * float(corr)


def isotropic_covariance(h, sigma_i, sigma_j, rho_i, rho_j, nu_i, nu_j,
                         sqrt8nu=True):
    """Scalar-kernel covariance, the Sigma_l = rho_l * I specialization.

    C = sigma_i sigma_j * 2 sqrt(rho_i rho_j)/(rho_i+rho_j)
        * M_nubar( h / sqrt((rho_i+rho_j)/2) )

    All arguments broadcast, so this is also the vectorized entry evaluator
    for tapered assemblies. The scalar rho_l has squared-distance units.
    """
    h = np.asarray(h, dtype=float)
    rho_i = np.asarray(rho_i, dtype=float)
    rho_j = np.asarray(rho_j, dtype=float)
    if np.any(rho_i <= 0) or np.any(rho_j <= 0):
        raise ValueError("scalar kernel scales must be positive")
    avg = 0.5 * (rho_i + rho_j)
    pref = np.sqrt(rho_i * rho_j) / avg
    nubar = np.sqrt(np.asarray(nu_i, dtype=float) * np.asarray(nu_j, dtype=float))
    arg = h / np.sqrt(avg)
    if sqrt8nu:
        arg = np.sqrt(8.0 * nubar) * arg
    val = np.asarray(sigma_i, dtype=float) * np.asarray(sigma_j, dtype=float) \
        * np.minimum(pref, 1.0) * _matern_shape(arg, nubar)
    if val.ndim == 0:
        return float(val)
    return val


def taper_correlation(h, spec: TaperSpec):
    """Compactly supported taper correlation, 1 at h=0 and 0 for h >= delta.

    spherical:  (1 - 1.5 u + 0.5 u^3) on u = h/delta < 1
    wendland1:  (1-u)^4 (4u + 1)
    wendland2:  (1-u)^6 ((35/3) u^2 + 6u + 1)

    family None is the constant 1 (no tapering).
    """
    h_arr = np.asarray(h, dtype=float)
    if np.any(h_arr < 0) or not np.all(np.isfinite(h_arr)):
        raise ValueError("h must be finite and nonnegative")
    if spec.family is None:
        out = np.ones_like(h_arr)
    else:
        u = np.minimum(h_arr / spec.delta, 1.0)
        if spec.family == "spherical":
            out = 1.0 - 1.5 * u + 0.5 * u**3
        elif spec.family == "wendland1":
            out = (1.0 - u) ** 4 * (4.0 * u + 1.0)
        elif spec.family == "wendland2":
            out = (1.0 - u) ** 6 * ((35.0 / 3.0) * u**2 + 6.0 * u + 1.0)
        else:  # pragma: no cover - TaperSpec validates on construction
            raise ValueError(f"unknown taper family {spec.family!r}")
        out = np.where(u >= 1.0, 0.0, out)
    if np.isscalar(h) and out.ndim == 0:
        return float(out)
    return out
