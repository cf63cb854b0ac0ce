"""Scripted desk-scale studies on synthetic data.

Three study ids, runnable via ``nscov study <id> --out DIR``:

fig3_covariate_pathologies
    Four one-dimensional scenarios (a transect through the plane) showing how
    the covariate type feeding the scale field shapes realizations: an ordinal
    covariate with one jump, an ordinal covariate with several jumps, a smooth
    sinusoid, and a noisy version of the sinusoid. All scenarios reuse the
    same white-noise draw so the panels are directly comparable. Across an
    ordinal boundary the determinant prefactor caps the attainable
    correlation: with kernel-scale levels in ratio 1:10 the cap is
    2*sqrt(10)/11 ~ 0.575 however close the two sites are, and the study
    measures that cap from straddling-pair correlations over replicates.

fig6_regularization_path
    A synthetic nonstationary field (sinusoidal covariates in each axis
    driving the mean, the variance, and the scale) fitted under a sweep of
    the baseline roughness penalty weight, warm-starting each fit from the
    previous one. Emits a path table: penalty weight, covariance condition
    estimate, parameter drift relative to the unpenalized fit, holdout RMSPE
    and CRPS. The generator constants below are study defaults; the original
    experiment is described only qualitatively and these are documented
    reconstructions.

nested_model_check
    Stationary data simulated from the intercept-only model; verifies that
    the covariate-driven covariance with all slopes zero collapses to the
    isotropic closed form, and that refitting with slopes on a pure-noise
    covariate neither loses likelihood nor produces large slope estimates.

Every study writes CSV/JSON artifacts under the spec's output directory and
is reproducible byte-for-byte from (study id, seed, replicates).
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .data import SpatialDataset, standardize
from .errors import ConfigError, NumericalError
from .kernels import SmoothnessBounds, isotropic_covariance, prefactor
from .likelihood import LikelihoodEvaluator
from .linalg import IndefiniteError, cholesky, condition_estimate
from .model import CovarianceModel
from .params import ModelDesign, ParameterVector, PenaltyConfig, layout_for
from .predict import krige
from .scoring import crps_gaussian
from .selection import initial_values, penalized_fit

__all__ = ["StudySpec", "run_study", "run_fig3_study", "run_fig6_study",
           "run_nested_model_check", "STUDY_IDS"]

STUDY_IDS = ("fig3_covariate_pathologies", "fig6_regularization_path",
             "nested_model_check")

# fig3 constants: 201 sites on a unit transect; ordinal kernel-scale levels in
# ratio 1:10 (the prefactor cap depends only on the ratio; the base sets the
# correlation length to roughly a fifth of the domain).
FIG3_N = 201
FIG3_KERNEL_LEVELS = (0.02, 0.2)
FIG3_MULTI_BOUNDARIES = (0.2, 0.4, 0.6, 0.8)
FIG3_SMOOTH_INTERCEPT = float(np.log(0.06))
FIG3_SMOOTH_SLOPE = 0.5
FIG3_NOISE_SD = 0.5

# fig6 constants (reconstruction defaults, see module docstring).
FIG6_GRID = (15, 20)          # 300 training sites on a jittered grid
FIG6_N_PRED = 50
FIG6_TRUTH_NU = 1.0
FIG6_MEAN_SLOPE = 0.5
FIG6_SD_SLOPE = 0.5
FIG6_SCALE_SLOPE = 0.5
FIG6_SCALE_INTERCEPT = float(np.log(0.12))
FIG6_LAMBDAS = (0.0, 0.001, 0.003, 0.01, 0.03, 0.1)

NESTED_N = 200
NESTED_SCALE_INTERCEPT = float(np.log(0.15))

_FMT = "%.17g"


@dataclass
class StudySpec:
    study_id: str
    replicates: int = 1
    seed: int = 0
    out_dir: str = "."

    def __post_init__(self):
        if self.study_id not in STUDY_IDS:
            raise ConfigError(
                f"unknown study id {self.study_id!r}; known ids: "
                + ", ".join(STUDY_IDS))
        if self.replicates < 1:
            raise ConfigError("study replicates must be >= 1")


def _write_csv(path: str, header, columns) -> None:
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(
                _FMT % v if isinstance(v, (float, np.floating)) else str(v)
                for v in row) + "\n")


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _transect(n: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, n)
    return np.column_stack([s, np.zeros(n)])


def _scale_field_chol(x: np.ndarray, intercept: float, slope: float,
                      nu: float = 1.0) -> np.ndarray:
    """Lower Cholesky factor of the transect covariance whose kernel scale is
    exp(2*(intercept + slope*x)) at each site (unit variance, smoothness nu)."""
    loc = _transect(x.size)
    ds = SpatialDataset(loc, None, {"x": x})
    design = ModelDesign(scale=("x",), bounds=SmoothnessBounds(nu, nu))
    layout = layout_for(design)
    pv = ParameterVector.zeros(layout)
    vals = pv.values.copy()
    vals[layout.index_of("scale")] = intercept
    vals[layout.index_of("scale", "x")] = slope
    C = CovarianceModel(ds, design).assemble_dense(pv.with_values(vals),
                                                   nugget=0.0)
    return cholesky(C, rescue=True).dense_lower()


def fig3_scenarios(n: int = FIG3_N, smooth_slope: float = FIG3_SMOOTH_SLOPE,
                   noise_sd: float = FIG3_NOISE_SD,
                   noise: Optional[np.ndarray] = None) -> Dict[str, dict]:
    """Covariate and scale-coefficient definitions of the four scenarios.

    The ordinal covariate takes level 0 or 1; level k has kernel scale
    FIG3_KERNEL_LEVELS[k]. The noisy covariate adds nonnegative noise to the
    smooth one (the distortion the study demonstrates: the noisy field is at
    least as large, yet decorrelates the process)."""
    s = np.linspace(0.0, 1.0, n)
    lev0, lev1 = FIG3_KERNEL_LEVELS
    jump_intercept = 0.5 * np.log(lev0)
    jump_slope = 0.5 * np.log(lev1 / lev0)
    one = (s >= 0.5).astype(float)
    # segment index by counting boundaries passed (exact comparisons; a
    # floor(s/width) would misplace the boundary sites to roundoff)
    multi = (np.searchsorted(FIG3_MULTI_BOUNDARIES, s, side="right")
             % 2).astype(float)
    smooth = np.sin(2.0 * np.pi * s)
    if noise is None:
        noise = np.zeros(n)
    noisy = smooth + noise_sd * np.abs(noise)
    return {
        "ordinal_one_jump": {"x": one, "intercept": jump_intercept,
                             "slope": jump_slope},
        "ordinal_multi_jump": {"x": multi, "intercept": jump_intercept,
                               "slope": jump_slope},
        "smooth_covariate": {"x": smooth, "intercept": FIG3_SMOOTH_INTERCEPT,
                             "slope": smooth_slope},
        "noisy_covariate": {"x": noisy, "intercept": FIG3_SMOOTH_INTERCEPT,
                            "slope": smooth_slope},
    }


def run_fig3_study(spec: StudySpec) -> dict:
    os.makedirs(spec.out_dir, exist_ok=True)
    n = FIG3_N
    rng = np.random.default_rng(spec.seed)
    u = rng.standard_normal((spec.replicates, n))
    noise = rng.standard_normal(n)
    s = np.linspace(0.0, 1.0, n)
    scen = fig3_scenarios(n, noise=noise)

    files: List[str] = []
    z_first: Dict[str, np.ndarray] = {}
    z_multi = None
    for name, sc in scen.items():
        L = _scale_field_chol(sc["x"], sc["intercept"], sc["slope"])
        z = u @ L.T  # replicates x n, identical white noise in every scenario
        z_first[name] = z[0]
        if name == "ordinal_multi_jump":
            z_multi = z
        path = os.path.join(spec.out_dir, f"fig3_{name}.csv")
        _write_csv(path, ["s", "covariate", "z"], [s, sc["x"], z[0]])
        files.append(path)

    # correlation across each level boundary, between the two sites that
    # straddle it, estimated over replicates and averaged over boundaries
    pair_corr = []
    for b in FIG3_MULTI_BOUNDARIES:
        j = int(np.searchsorted(s, b))
        i = j - 1
        c = np.corrcoef(z_multi[:, i], z_multi[:, j])[0, 1]
        pair_corr.append(float(c))
    measured = float(np.mean(pair_corr))
    lev0, lev1 = FIG3_KERNEL_LEVELS
    cap = prefactor(lev0 * np.eye(2), lev1 * np.eye(2))

    summary = {
        "study": spec.study_id,
        "seed": spec.seed,
        "replicates": spec.replicates,
        "kernel_levels": [lev0, lev1],
        "boundaries": list(FIG3_MULTI_BOUNDARIES),
        "pair_correlations": pair_corr,
        "measured_cap": measured,
        "prefactor_cap": float(cap),
    }
    spath = os.path.join(spec.out_dir, "fig3_cap_summary.json")
    _write_json(spath, summary)
    files.append(spath)
    return {**summary, "files": files, "scenarios": scen,
            "z": z_first, "white_noise": u[0], "locations": s}


def _fig6_truth() -> tuple:
    design = ModelDesign(mean=("x1", "x2"), std_dev=("x1", "x2"),
                         scale=("x1", "x2"),
                         bounds=SmoothnessBounds(FIG6_TRUTH_NU, FIG6_TRUTH_NU))
    layout = layout_for(design)
    pv = ParameterVector.zeros(layout)
    vals = pv.values.copy()
    for nm in ("x1", "x2"):
        vals[layout.index_of("mean", nm)] = FIG6_MEAN_SLOPE
        vals[layout.index_of("std_dev", nm)] = FIG6_SD_SLOPE
        vals[layout.index_of("scale", nm)] = FIG6_SCALE_SLOPE
    vals[layout.index_of("scale")] = FIG6_SCALE_INTERCEPT
    return design, pv.with_values(vals)


def _fig6_sites(rng: np.random.Generator) -> np.ndarray:
    gx, gy = FIG6_GRID
    ix, iy = np.meshgrid(np.arange(gx), np.arange(gy), indexing="ij")
    base = np.column_stack([(ix.ravel() + 0.5) / gx, (iy.ravel() + 0.5) / gy])
    jit = rng.uniform(-0.3, 0.3, size=base.shape) / np.array([gx, gy])
    return base + jit


def run_fig6_study(spec: StudySpec, lambdas=FIG6_LAMBDAS) -> dict:
    os.makedirs(spec.out_dir, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    train_loc = _fig6_sites(rng)
    pred_loc = rng.uniform(0.0, 1.0, size=(FIG6_N_PRED, 2))
    all_loc = np.vstack([train_loc, pred_loc])
    raw1 = np.sin(2.0 * np.pi * all_loc[:, 0])
    raw2 = np.sin(2.0 * np.pi * all_loc[:, 1])
    n_tr = train_loc.shape[0]
    x1_tr, st1 = standardize(raw1[:n_tr], "x1", log=False)
    x2_tr, st2 = standardize(raw2[:n_tr], "x2", log=False)
    x1_pr, _ = standardize(raw1[n_tr:], "x1", log=False, stats=st1)
    x2_pr, _ = standardize(raw2[n_tr:], "x2", log=False, stats=st2)
    covs_all = {"x1": np.concatenate([x1_tr, x1_pr]),
                "x2": np.concatenate([x2_tr, x2_pr])}

    truth_design, truth_pv = _fig6_truth()
    ds_all = SpatialDataset(all_loc, None, covs_all)
    model = CovarianceModel(ds_all, truth_design)
    C = model.assemble_dense(truth_pv, nugget=0.0)
    L = cholesky(C, rescue=True).dense_lower()
    z_all = model.X_mean @ truth_pv.values[truth_pv.layout.slices["mean"]] \
        + L @ rng.standard_normal(all_loc.shape[0])

    record = {"x1": st1, "x2": st2}
    train = SpatialDataset(train_loc, z_all[:n_tr],
                           {"x1": x1_tr, "x2": x2_tr}, record=record)
    hold = SpatialDataset(pred_loc, z_all[n_tr:],
                          {"x1": x1_pr, "x2": x2_pr}, record=record,
                          check_distinct=False)

    fit_design = ModelDesign(mean=("x1", "x2"), std_dev=("x1", "x2"),
                             scale=("x1", "x2"), smooth=(),
                             bounds=SmoothnessBounds(0.5, 2.5))
    ev = LikelihoodEvaluator(train, fit_design)
    layout = ev.layout
    slope_idx = np.array([k for k, (comp, nm, icpt) in
                          enumerate(layout.entries) if not icpt])
    i_scale0 = layout.index_of("scale")
    i_sd0 = layout.index_of("std_dev")

    rows: List[dict] = []
    x_prev = initial_values(ev)
    ref = None
    for lam in lambdas:
        cfg = PenaltyConfig(lambda_r=float(lam))
        row = {"lambda_r": float(lam), "status": "ok", "loglik": np.nan,
               "condition_estimate": np.nan, "rmspe": np.nan, "crps": np.nan,
               "rel_change_scale_intercept": np.nan,
               "rel_change_sd_intercept": np.nan,
               "max_rel_change_slopes": np.nan, "wall_time": 0.0}
        t0 = time.perf_counter()
        try:
            res = penalized_fit(train, fit_design, cfg=cfg, x0=x_prev,
                                evaluator=ev)
            x_prev = res.x  # warm start for the next penalty weight
            pv = ParameterVector(layout, res.x)
            row["loglik"] = float(ev.loglik(res.x))
            row["condition_estimate"] = float(
                condition_estimate(ev.model.assemble(pv)))
            pred = krige(train, pv, new_covariates=hold, evaluator=ev)
            err = pred.mean - hold.response
            row["rmspe"] = float(np.sqrt(np.mean(err ** 2)))
            row["crps"] = float(np.mean(crps_gaussian(
                hold.response, pred.mean, np.maximum(pred.sd, 1e-12))))
            if ref is None:
                ref = res.x.copy()
            rel = np.abs(res.x - ref) / (1.0 + np.abs(ref))
            row["rel_change_scale_intercept"] = float(rel[i_scale0])
            row["rel_change_sd_intercept"] = float(rel[i_sd0])
            row["max_rel_change_slopes"] = float(np.max(rel[slope_idx]))
        except (NumericalError, IndefiniteError) as err:
            row["status"] = f"failed: {err}"
        row["wall_time"] = time.perf_counter() - t0
        rows.append(row)

    header = ["lambda_r", "status", "loglik", "condition_estimate", "rmspe",
              "crps", "rel_change_scale_intercept", "rel_change_sd_intercept",
              "max_rel_change_slopes", "wall_time"]
    path = os.path.join(spec.out_dir, "fig6_path.csv")
    _write_csv(path, header, [[r[h] for r in rows] for h in header])
    meta = {"study": spec.study_id, "seed": spec.seed,
            "lambdas": [float(v) for v in lambdas],
            "n_train": int(n_tr), "n_pred": int(FIG6_N_PRED),
            "truth": {"mean_slope": FIG6_MEAN_SLOPE, "sd_slope": FIG6_SD_SLOPE,
                      "scale_slope": FIG6_SCALE_SLOPE,
                      "scale_intercept": FIG6_SCALE_INTERCEPT,
                      "nu": FIG6_TRUTH_NU}}
    mpath = os.path.join(spec.out_dir, "fig6_meta.json")
    _write_json(mpath, meta)
    return {**meta, "rows": rows, "files": [path, mpath]}


def run_nested_model_check(spec: StudySpec) -> dict:
    os.makedirs(spec.out_dir, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    loc = rng.uniform(0.0, 1.0, size=(NESTED_N, 2))
    w = rng.standard_normal(NESTED_N)
    w = (w - w.mean()) / w.std(ddof=1)

    base = ModelDesign(bounds=SmoothnessBounds(1.0, 1.0))
    lay0 = layout_for(base)
    pv0 = ParameterVector.zeros(lay0)
    vals = pv0.values.copy()
    vals[lay0.index_of("scale")] = NESTED_SCALE_INTERCEPT
    pv0 = pv0.with_values(vals)

    ds = SpatialDataset(loc, None, {"w": w})
    C = CovarianceModel(ds, base).assemble_dense(pv0, nugget=0.0)
    z = cholesky(C, rescue=True).dense_lower() @ rng.standard_normal(NESTED_N)
    data = SpatialDataset(loc, z, {"w": w})

    # zero-slope covariance equals the isotropic closed form entrywise; the
    # dense model's kernel value is exp(2 * scale intercept)
    diff = loc[:, None, :] - loc[None, :, :]
    h = np.sqrt((diff ** 2).sum(-1))
    kval = float(np.exp(2.0 * NESTED_SCALE_INTERCEPT))
    C_iso = isotropic_covariance(h, 1.0, 1.0, kval, kval, 1.0, 1.0)
    max_diff = float(np.max(np.abs(C - C_iso)))

    fit0 = penalized_fit(data, base)
    ev0 = LikelihoodEvaluator(data, base)
    ll0 = float(ev0.loglik(fit0.x))

    wide = ModelDesign(std_dev=("w",), scale=("w",),
                       bounds=SmoothnessBounds(1.0, 1.0))
    evw = LikelihoodEvaluator(data, wide)
    fitw = penalized_fit(data, wide, evaluator=evw)
    llw = float(evw.loglik(fitw.x))
    pvw = ParameterVector(evw.layout, fitw.x)
    slopes = {"std_dev.w": float(fitw.x[evw.layout.index_of("std_dev", "w")]),
              "scale.w": float(fitw.x[evw.layout.index_of("scale", "w")])}

    summary = {
        "study": spec.study_id,
        "seed": spec.seed,
        "n": NESTED_N,
        "max_abs_cov_diff_vs_isotropic": max_diff,
        "loglik_stationary": ll0,
        "loglik_with_noise_slopes": llw,
        "likelihood_ratio_stat": 2.0 * (llw - ll0),
        "noise_slope_estimates": slopes,
    }
    spath = os.path.join(spec.out_dir, "nested_check.json")
    _write_json(spath, summary)
    dpath = os.path.join(spec.out_dir, "nested_data.csv")
    _write_csv(dpath, ["x", "y", "w", "z"], [loc[:, 0], loc[:, 1], w, z])
    return {**summary, "files": [spath, dpath], "pv_wide": pvw}


def run_study(spec: StudySpec) -> dict:
    if spec.study_id == "fig3_covariate_pathologies":
        return run_fig3_study(spec)
    if spec.study_id == "fig6_regularization_path":
        return run_fig6_study(spec)
    return run_nested_model_check(spec)
