"""Estimator-style wrapper: fit/predict/score over arrays whose leading
columns are coordinates and remaining columns are named covariates.

This is a thin adapter over the library (ModelDesign + two-stage fitting +
kriging) for pipeline use; the component covariate lists refer to the names
given in covariate_names. Covariates are standardized internally at fit time
and the record is re-applied at predict time.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .data import ColumnStats, SpatialDataset, standardize
from .errors import DataError
from .kernels import SmoothnessBounds, TaperSpec
from .likelihood import LikelihoodEvaluator
from .params import ModelDesign, ParameterVector, PenaltyConfig
from .predict import krige
from .selection import penalized_fit, two_stage_fit

__all__ = ["NonstationaryGP"]


class NonstationaryGP(BaseEstimator, RegressorMixin):
    """Gaussian-process regressor with covariate-driven nonstationarity.

    X rows are [coords..., covariates...]: the first n_coords columns are
    spatial coordinates (1 or 2), the rest are covariates named by
    covariate_names (defaults c1, c2, ...). Component parameters (mean,
    std_dev, scale, aniso, tilt, smooth) list covariate names; aniso/tilt
    None disables the component, () enables it intercept-only.

    With lambda_mu or lambda_sigma positive (and two_stage != False) fitting
    runs the two-stage selection; otherwise a single penalized fit.
    """

    def __init__(self, n_coords: int = 2,
                 covariate_names: Optional[Tuple[str, ...]] = None,
                 mean: Tuple[str, ...] = (),
                 std_dev: Tuple[str, ...] = (),
                 scale: Tuple[str, ...] = (),
                 aniso: Optional[Tuple[str, ...]] = None,
                 tilt: Optional[Tuple[str, ...]] = None,
                 smooth: Tuple[str, ...] = (),
                 nu_min: float = 0.5, nu_max: float = 2.5,
                 taper_family: Optional[str] = None,
                 taper_delta: Optional[float] = None,
                 nugget: bool = False, reparameterize: bool = False,
                 lambda_r: float = 0.0, lambda_mu: float = 0.0,
                 lambda_sigma: float = 0.0, kappa: float = 1e6,
                 epsilon: float = 1e-4, two_stage: Optional[bool] = None,
                 max_iterations: int = 200, standardize_covariates: bool = True,
                 seed: int = 0):
        self.n_coords = n_coords
        self.covariate_names = covariate_names
        self.mean = mean
        self.std_dev = std_dev
        self.scale = scale
        self.aniso = aniso
        self.tilt = tilt
        self.smooth = smooth
        self.nu_min = nu_min
        self.nu_max = nu_max
        self.taper_family = taper_family
        self.taper_delta = taper_delta
        self.nugget = nugget
        self.reparameterize = reparameterize
        self.lambda_r = lambda_r
        self.lambda_mu = lambda_mu
        self.lambda_sigma = lambda_sigma
        self.kappa = kappa
        self.epsilon = epsilon
        self.two_stage = two_stage
        self.max_iterations = max_iterations
        self.standardize_covariates = standardize_covariates
        self.seed = seed

    # -- internals ---------------------------------------------------------

    def _check_X(self, X) -> Tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise DataError("X must be a 2-d array [coords..., covariates...]")
        if self.n_coords not in (1, 2):
            raise DataError("n_coords must be 1 or 2")
        if X.shape[1] < self.n_coords:
            raise DataError(
                f"X has {X.shape[1]} columns but n_coords={self.n_coords}")
        if not np.all(np.isfinite(X)):
            raise DataError("X contains non-finite values")
        return X[:, :self.n_coords], X[:, self.n_coords:]

    def _names(self, n_cov: int) -> Tuple[str, ...]:
        if self.covariate_names is not None:
            if len(self.covariate_names) != n_cov:
                raise DataError(
                    f"covariate_names has {len(self.covariate_names)} entries "
                    f"but X supplies {n_cov} covariate columns")
            return tuple(self.covariate_names)
        return tuple(f"c{i+1}" for i in range(n_cov))

    def _design(self) -> ModelDesign:
        taper = (TaperSpec(self.taper_family, self.taper_delta)
                 if self.taper_family and str(self.taper_family).lower() != "none"
                 else TaperSpec(None))
        return ModelDesign(
            mean=tuple(self.mean), std_dev=tuple(self.std_dev),
            scale=tuple(self.scale),
            aniso=None if self.aniso is None else tuple(self.aniso),
            tilt=None if self.tilt is None else tuple(self.tilt),
            smooth=tuple(self.smooth),
            bounds=SmoothnessBounds(self.nu_min, self.nu_max),
            taper=taper,
            penalties=PenaltyConfig(self.lambda_r, self.lambda_mu,
                                    self.lambda_sigma, self.kappa,
                                    self.epsilon),
            nugget=self.nugget, reparameterize=self.reparameterize,
            seed=self.seed,
        )

    def _dataset(self, X, y=None, record=None) -> SpatialDataset:
        loc, raw = self._check_X(X)
        names = self._names(raw.shape[1])
        covs, rec = {}, {}
        for k, name in enumerate(names):
            if self.standardize_covariates:
                stats = None if record is None else record.get(name)
                col, stats = standardize(raw[:, k], name, log=False,
                                         stats=stats, source=name)
                covs[name] = col
                rec[name] = stats
            else:
                covs[name] = raw[:, k]
        return SpatialDataset(loc, y, covs, record=rec,
                              check_distinct=y is not None)

    # -- estimator API ------------------------------------------------------

    def fit(self, X, y):
        y = np.asarray(y, dtype=float).ravel()
        dataset = self._dataset(X, y)
        design = self._design()
        design.validate_against(dataset)
        evaluator = LikelihoodEvaluator(dataset, design)
        use_two_stage = (self.two_stage if self.two_stage is not None
                         else (self.lambda_mu > 0 or self.lambda_sigma > 0))
        if use_two_stage:
            result, active = two_stage_fit(dataset, design,
                                           evaluator=evaluator,
                                           max_iterations=self.max_iterations)
        else:
            result, active = penalized_fit(
                dataset, design, evaluator=evaluator,
                max_iterations=self.max_iterations), None
        self.dataset_ = dataset
        self.design_ = design
        self.evaluator_ = evaluator
        self.result_ = result
        self.active_ = active
        self.params_ = ParameterVector(evaluator.layout, result.x)
        self.loglik_ = evaluator.loglik(result.x)
        self.n_features_in_ = np.asarray(X).shape[1]
        return self

    def predict(self, X, return_std: bool = False,
                include_nugget: bool = False):
        if not hasattr(self, "params_"):
            raise RuntimeError("estimator is not fitted")
        new_data = self._dataset(X, None, record=self.dataset_.record)
        pred = krige(self.dataset_, self.params_, new_covariates=new_data,
                     include_nugget=include_nugget, evaluator=self.evaluator_)
        if return_std:
            return pred.mean, pred.sd
        return pred.mean
