"""Conditional Gaussian (kriging) prediction and seeded simulation.

Prediction uses plug-in parameter estimates: mean = Xp b + C_pz C_z^-1 (z-Xb),
covariance = C_p - C_pz C_z^-1 C_zp. Under a tapered model every block carries
the same taper, so the joint system stays positive definite. Predictive sd
excludes the nugget unless asked for data-scale intervals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .data import SpatialDataset
from .errors import DataError, NumericalError
from .likelihood import LikelihoodEvaluator
from .linalg import IndefiniteError, cholesky
from .model import CovarianceModel, cov_block, local_fields
from .params import ModelDesign, ParameterVector

__all__ = ["PredictiveDistribution", "krige", "simulate"]

_NEG_VAR_TOL = -1e-8


@dataclass
class PredictiveDistribution:
    """Pointwise predictive mean/sd, optionally the full covariance, in
    response units. include_nugget records whether sd is on the data scale."""

    mean: np.ndarray
    sd: np.ndarray
    cov: Optional[np.ndarray] = None
    include_nugget: bool = False

    def __len__(self):
        return self.mean.shape[0]


def _clamp_variances(var: np.ndarray) -> np.ndarray:
    bad = var < _NEG_VAR_TOL
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise NumericalError(
            f"predictive variance {var[k]:.3e} at site {k} is negative beyond "
            "round-off; the training covariance is numerically unstable"
        )
    return np.maximum(var, 0.0)


def _as_prediction_dataset(dataset: SpatialDataset, new_locations,
                           new_covariates) -> SpatialDataset:
    if isinstance(new_covariates, SpatialDataset):
        return new_covariates
    new_locations = np.asarray(new_locations, dtype=float)
    if new_locations.ndim == 1:
        new_locations = new_locations[:, None]
    covs = {} if new_covariates is None else dict(new_covariates)
    return SpatialDataset(new_locations, None, covs, record=dataset.record,
                          check_distinct=False)


def krige(dataset: SpatialDataset, pv: ParameterVector, new_locations=None,
          new_covariates=None, include_nugget: bool = False,
          full_cov: bool = False,
          evaluator: Optional[LikelihoodEvaluator] = None) -> PredictiveDistribution:
    """Predict at new sites given training data and plug-in parameters.

    new_covariates may be a dict of standardized columns aligned with
    new_locations, or a ready SpatialDataset (then new_locations is ignored).
    """
    if dataset.response is None:
        raise DataError("training dataset has no response to condition on")
    design: ModelDesign = pv.layout.design
    new_data = _as_prediction_dataset(dataset, new_locations, new_covariates)
    for name in design.all_covariates():
        if name not in new_data.covariates:
            raise DataError(f"prediction sites are missing covariate '{name}'")
    if new_data.d != dataset.d:
        raise DataError("prediction sites have a different dimension")

    ev = evaluator if evaluator is not None else LikelihoodEvaluator(dataset, design)
    entry = ev.factor(pv.values)
    if isinstance(entry, tuple):
        raise IndefiniteError(f"training covariance failed to factor: {entry[1]}")

    f_train = ev.model.fields(pv)
    f_new = local_fields(new_data, design, pv)
    C_pz = cov_block(design, f_new, new_data.locations, f_train,
                     dataset.locations)
    r = ev.resid(pv.values)
    beta = pv.values[pv.layout.slices["mean"]]
    mean = new_data.design_matrix(design.mean) @ beta + C_pz @ entry.solve(r)

    nug = pv.decoded()["nugget"] if include_nugget else 0.0
    V = entry.solve(C_pz.T)
    if full_cov:
        C_p = cov_block(design, f_new, new_data.locations, f_new,
                        new_data.locations)
        cov = C_p - C_pz @ V
        cov = 0.5 * (cov + cov.T)
        if nug:
            cov[np.diag_indices_from(cov)] += nug
        var = _clamp_variances(np.diag(cov).copy())
        cov[np.diag_indices_from(cov)] = var
        return PredictiveDistribution(mean, np.sqrt(var), cov=cov,
                                      include_nugget=include_nugget)
    quad = np.einsum("ij,ji->i", C_pz, V)
    var = _clamp_variances(f_new.sigma**2 + nug - quad)
    return PredictiveDistribution(mean, np.sqrt(var), include_nugget=include_nugget)


def simulate(locations, covariates, pv: ParameterVector,
             seed: Union[int, np.random.Generator] = 0) -> np.ndarray:
    """Draw one realization z = X beta + L u + nugget noise, L the lower
    Cholesky factor of the (taper-sparsified, if designed) process covariance.
    Deterministic per seed; the nugget draw follows the process draw from the
    same generator."""
    design: ModelDesign = pv.layout.design
    locations = np.asarray(locations, dtype=float)
    if locations.ndim == 1:
        locations = locations[:, None]
    ds = SpatialDataset(locations, None, dict(covariates or {}), record=None)
    design.validate_against(ds)
    model = CovarianceModel(ds, design)
    if design.taper.enabled:
        C = model.assemble_tapered(pv, nugget=0.0).toarray()
    else:
        C = model.assemble_dense(pv, nugget=0.0)
    if not np.any(np.diag(C) > 0):
        L = np.zeros_like(C)  # degenerate zero-variance limit
    else:
        factor = cholesky(C, rescue=True)
        L = factor.dense_lower()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.standard_normal(ds.n)
    z = model.X_mean @ pv.values[pv.layout.slices["mean"]] + L @ u
    nug = pv.decoded()["nugget"]
    if nug > 0:
        z = z + np.sqrt(nug) * rng.standard_normal(ds.n)
    return z
