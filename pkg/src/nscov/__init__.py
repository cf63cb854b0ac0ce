"""Covariate-driven nonstationary Gaussian-process models.

A modular covariance family whose marginal standard deviation, local
anisotropy (scale, ratio, tilt), and smoothness each regress on covariates,
with dense and taper-sparsified likelihoods, penalized maximum likelihood,
two-stage covariate selection, kriging, and proper-scoring evaluation.

Typical library use:

    from nscov import (SpatialDataset, ModelDesign, penalized_fit,
                       ParameterVector, krige)

    data = load_csv("obs.csv", ("x", "y"), ("elev",), response_col="z")
    design = ModelDesign(mean=("elev",), std_dev=("elev",), scale=("elev",))
    result = penalized_fit(data, design)
    pv = ParameterVector(layout_for(design), result.x)
    pred = krige(data, pv, new_locations=sites, new_covariates=covs)

or through the scikit-learn style wrapper ``NonstationaryGP``, or the
``nscov`` command-line tool (see ``nscov --help``).
"""

from .data import ColumnStats, SpatialDataset, load_csv, standardize
from .errors import ConfigError, DataError, NumericalError
from .kernels import (AnisotropyCoefficients, LocalKernel, SmoothnessBounds,
                      TaperSpec, isotropic_covariance, kernel_eigen,
                      kernel_matrix, matern_correlation, nonstationary_covariance,
                      nu_fn, prefactor, q_distance, sigma_fn, taper_correlation)
from .likelihood import (LikelihoodEvaluator, lasso_penalty, loglik,
                         loglik_tapered, microergodic_penalty, penalized_loglik,
                         smooth_l1, stage1_objective)
from .linalg import (CholeskyFactor, IndefiniteError, SparsePattern, SparseSpd,
                     build_pattern, cholesky, condition_estimate)
from .model import CovarianceModel, assemble_dense, assemble_tapered, cov_block
from .optimize import (OptimProblem, OptimResult, fd_gradient, hessian_fd,
                       maximize, standard_errors)
from .params import (ModelDesign, ParameterLayout, ParameterVector,
                     PenaltyConfig, layout_for)
from .predict import PredictiveDistribution, krige, simulate
from .scoring import (ScoreReport, cluster_holdout, coverage, crps_gaussian,
                      ks_statistic, logscore_gaussian, score_report)
from .selection import (ActiveSet, TuneGrid, TuneResult, initial_values,
                        penalized_fit, stage1_fit, stage2_refit, tune,
                        two_stage_fit)
from .config import RunConfig, load_config
from .estimator import NonstationaryGP
from .experiments import StudySpec, run_study

__version__ = "0.1.0"

__all__ = [
    "AnisotropyCoefficients", "ActiveSet", "CholeskyFactor", "ColumnStats",
    "ConfigError", "CovarianceModel", "DataError", "IndefiniteError",
    "LikelihoodEvaluator", "LocalKernel", "ModelDesign", "NonstationaryGP",
    "NumericalError", "OptimProblem", "OptimResult", "ParameterLayout",
    "ParameterVector", "PenaltyConfig", "PredictiveDistribution", "RunConfig",
    "ScoreReport", "SmoothnessBounds", "SparsePattern", "SparseSpd",
    "SpatialDataset", "StudySpec", "TaperSpec", "TuneGrid", "TuneResult",
    "assemble_dense", "assemble_tapered", "build_pattern", "cholesky",
    "cluster_holdout", "condition_estimate", "cov_block", "coverage",
    "crps_gaussian", "fd_gradient", "hessian_fd", "initial_values",
    "isotropic_covariance", "kernel_eigen", "kernel_matrix", "krige",
    "ks_statistic", "lasso_penalty", "layout_for", "load_config", "load_csv",
    "loglik", "loglik_tapered", "logscore_gaussian", "matern_correlation",
    "maximize", "microergodic_penalty", "nonstationary_covariance", "nu_fn",
    "penalized_fit", "penalized_loglik", "prefactor", "q_distance",
    "run_study", "score_report", "sigma_fn", "simulate", "smooth_l1",
    "stage1_fit", "stage1_objective", "stage2_refit", "standard_errors",
    "standardize", "taper_correlation", "tune", "two_stage_fit",
]
