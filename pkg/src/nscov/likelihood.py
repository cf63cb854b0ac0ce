"""Gaussian log-likelihood (dense and tapered), the roughness penalty on the
baseline scale/smoothness, smooth-L1 coefficient penalties, and the composed
stage-one objective.

Sign conventions: all objectives are to be MAXIMIZED, and every penalty is
subtracted. An indefinite covariance (or an overflowed entry) makes the
objective -inf rather than raising, so optimizers treat the point as
infeasible.

The evaluator class caches Cholesky factors keyed on the covariance-affecting
subvector of the parameters, so objective evaluations that move only mean
coefficients (finite-difference steps, profiling) reuse the factorization.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Optional

import numpy as np

from .data import SpatialDataset
from .errors import NumericalError
from .kernels import TaperSpec, nu_from_eta
from .linalg import CholeskyFactor, IndefiniteError, SparsePattern, cholesky
from .model import CovarianceModel
from .params import ModelDesign, ParameterVector, PenaltyConfig

__all__ = ["LikelihoodEvaluator", "loglik", "loglik_tapered", "smooth_l1",
           "penalized_loglik", "stage1_objective", "microergodic_penalty",
           "lasso_penalty"]

LOG_2PI = float(np.log(2.0 * np.pi))


def smooth_l1(x, kappa: float):
    """Smooth approximation to |x|: kappa^-1 [log(1+e^{kappa x}) +
    log(1+e^{-kappa x})], always >= |x| and within 2 log2 / kappa of it.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    ax = np.abs(x)
    return ax + (2.0 / kappa) * np.log1p(np.exp(-kappa * ax))


def microergodic_penalty(pv: ParameterVector, cfg: PenaltyConfig,
                         n: int) -> float:
    """n * lambda_r * sqrt(nu0) * rho0, the roughness penalty at the baseline
    (all covariates zero): nu0 from the smoothness intercept, rho0 = exp of
    the decoded scale intercept."""
    if cfg.lambda_r == 0.0:
        return 0.0
    dec = pv.decoded()
    nu0 = float(nu_from_eta(np.array([dec["smooth"][0]]),
                            pv.layout.design.bounds)[0])
    rho0 = float(np.exp(dec["scale"][0]))
    return n * cfg.lambda_r * np.sqrt(nu0) * rho0


def lasso_penalty(pv: ParameterVector, cfg: PenaltyConfig, n: int) -> float:
    """n*lambda_mu * sum p(beta_i) + n*lambda_sigma * sum p(theta_j) over the
    covariate-slope coefficients (intercepts and the nugget never enter).
    Applied to the stored coordinates, so under the shared-covariate
    reparameterization the (d)-coordinates are what get shrunk."""
    layout = pv.layout
    total = 0.0
    if cfg.lambda_mu:
        total += n * cfg.lambda_mu * float(
            np.sum(smooth_l1(pv.values[layout.mean_slopes], cfg.kappa)))
    if cfg.lambda_sigma:
        total += n * cfg.lambda_sigma * float(
            np.sum(smooth_l1(pv.values[layout.cov_slopes], cfg.kappa)))
    return total


class LikelihoodEvaluator:
    """Objective evaluation bound to one dataset/design pair.

    Keeps the assembled geometry and a small LRU cache of Cholesky factors.
    All objective methods take a raw value array in the layout's stored
    coordinates and return a float (possibly -inf).
    """

    def __init__(self, dataset: SpatialDataset, design: ModelDesign,
                 pattern: Optional[SparsePattern] = None, cache_size: int = 10):
        self.model = CovarianceModel(dataset, design)
        if pattern is not None:
            self.model._pattern = pattern
        self.design = design
        self.layout = self.model.layout
        self.dataset = dataset
        self.y = dataset.response
        self.X = self.model.X_mean
        self.n = dataset.n
        mean_mask = np.zeros(self.layout.size, dtype=bool)
        mean_mask[self.layout.slices["mean"]] = True
        self._cov_mask = ~mean_mask
        self._cache: OrderedDict[bytes, object] = OrderedDict()
        self._cache_size = cache_size
        self.n_factorizations = 0
        self.n_cache_hits = 0
        if design.taper.enabled:
            self.model.pattern  # build the sparsity structure eagerly

    def _pv(self, values: np.ndarray) -> ParameterVector:
        return ParameterVector(self.layout, values)

    def factor(self, values: np.ndarray):
        """CholeskyFactor of Sigma_Z at these values, or None with the failure
        message if the matrix did not factor."""
        key = np.ascontiguousarray(values[self._cov_mask]).tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            self.n_cache_hits += 1
            return hit
        try:
            A = self.model.assemble(self._pv(values))
            entry = cholesky(A)
            self.n_factorizations += 1
        except (IndefiniteError, NumericalError) as err:
            entry = (None, str(err))
        self._cache[key] = entry
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return entry

    def resid(self, values: np.ndarray) -> np.ndarray:
        beta = values[self.layout.slices["mean"]]
        return self.y - self.X @ beta

    def loglik(self, values: np.ndarray) -> float:
        entry = self.factor(values)
        if isinstance(entry, tuple):
            return -np.inf
        factor: CholeskyFactor = entry
        r = self.resid(values)
        quad = float(r @ factor.solve(r))
        return -0.5 * (self.n * LOG_2PI + factor.logdet + quad)

    def penalized(self, values: np.ndarray,
                  cfg: Optional[PenaltyConfig] = None) -> float:
        cfg = cfg if cfg is not None else self.design.penalties
        ll = self.loglik(values)
        if not np.isfinite(ll):
            return ll
        return ll - microergodic_penalty(self._pv(values), cfg, self.n)

    def stage1(self, values: np.ndarray,
               cfg: Optional[PenaltyConfig] = None) -> float:
        cfg = cfg if cfg is not None else self.design.penalties
        pl = self.penalized(values, cfg)
        if not np.isfinite(pl):
            return pl
        return pl - lasso_penalty(self._pv(values), cfg, self.n)

    def gls_beta(self, values: np.ndarray,
                 cols: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
        """Generalized-least-squares mean coefficients given the covariance at
        these values; None when the covariance does not factor. With cols (a
        boolean mask over mean columns) only those columns are fit, the rest
        returned as 0."""
        entry = self.factor(values)
        if isinstance(entry, tuple):
            return None
        X = self.X if cols is None else self.X[:, cols]
        W = entry.solve(X)
        XtWX = X.T @ W
        XtWy = W.T @ self.y
        try:
            b = np.linalg.solve(XtWX, XtWy)
        except np.linalg.LinAlgError:
            b = np.linalg.lstsq(XtWX, XtWy, rcond=None)[0]
        if cols is None:
            return b
        full = np.zeros(self.X.shape[1])
        full[cols] = b
        return full

    def with_profiled_mean(self, values: np.ndarray,
                           cols: Optional[np.ndarray] = None) -> np.ndarray:
        """Copy of values with the mean block replaced by its GLS optimum."""
        beta = self.gls_beta(values, cols)
        if beta is None:
            return values
        out = values.copy()
        out[self.layout.slices["mean"]] = beta
        return out


def loglik(dataset: SpatialDataset, pv: ParameterVector) -> float:
    """Gaussian log-likelihood -(n/2)log 2pi - 1/2 logdet - 1/2 r' Sigma^-1 r
    under the design carried by the parameter layout."""
    ev = LikelihoodEvaluator(dataset, pv.layout.design)
    return ev.loglik(pv.values)


def loglik_tapered(dataset: SpatialDataset, pv: ParameterVector,
                   pattern: Optional[SparsePattern] = None,
                   taper: Optional[TaperSpec] = None) -> float:
    """Log-likelihood with the tapered sparse covariance. The design must be
    tapered (or an explicit taper supplied to re-taper an isotropic design)."""
    design = pv.layout.design
    if taper is not None and taper is not design.taper:
        from dataclasses import replace
        design = replace(design, taper=taper)
        pv = ParameterVector(type(pv.layout)(design), pv.values)
    if not design.taper.enabled:
        raise ValueError("loglik_tapered requires an enabled taper")
    ev = LikelihoodEvaluator(dataset, design, pattern=pattern)
    return ev.loglik(pv.values)


def penalized_loglik(dataset: SpatialDataset, pv: ParameterVector,
                     cfg: Optional[PenaltyConfig] = None) -> float:
    """loglik minus the roughness penalty n lambda_r sqrt(nu0) rho0."""
    ev = LikelihoodEvaluator(dataset, pv.layout.design)
    return ev.penalized(pv.values, cfg)


def stage1_objective(dataset: SpatialDataset, pv: ParameterVector,
                     cfg: Optional[PenaltyConfig] = None) -> float:
    """penalized_loglik minus the smooth-L1 coefficient penalties."""
    ev = LikelihoodEvaluator(dataset, pv.layout.design)
    return ev.stage1(pv.values, cfg)
