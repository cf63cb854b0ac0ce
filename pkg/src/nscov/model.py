"""Evaluation of the covariance model on datasets: local parameter fields,
dense and tapered matrix assembly, and cross-covariance blocks.

Two covariance forms exist. Without a taper the model is the full kernel
construction (2x2 kernel matrices; these collapse to rho^2 * I when aniso and
tilt are disabled). With a taper the model is the scalar isotropic form with
Sigma_l = rho_l * I, whose entries get multiplied elementwise by the taper
correlation on the sparsity pattern. Dense assembly of a tapered design (used
to check the large-delta limit) evaluates the same scalar form without the
pattern.

Assembly is vectorized over the upper triangle with the pairwise geometry
cached per dataset, since it never changes across parameter evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import SpatialDataset
from .errors import NumericalError
from .kernels import (TaperSpec, _clamp_omega, _matern_shape, nu_from_eta,
                      taper_correlation)
from .linalg import SparsePattern, SparseSpd, build_pattern
from .params import ModelDesign, ParameterLayout, ParameterVector

__all__ = ["LocalFields", "CovarianceModel", "local_fields", "assemble_dense",
           "assemble_tapered"]


@dataclass
class LocalFields:
    """Per-location parameter fields realized from a design and parameters.

    kind 'iso' carries the scalar kernel a (Sigma = a * I); kind 'full'
    carries the three distinct entries of the 2x2 kernel matrices.
    """

    sigma: np.ndarray
    nu: np.ndarray
    kind: str
    a: Optional[np.ndarray] = None
    s11: Optional[np.ndarray] = None
    s12: Optional[np.ndarray] = None
    s22: Optional[np.ndarray] = None


def local_fields(dataset: SpatialDataset, design: ModelDesign,
                 pv: ParameterVector) -> LocalFields:
    """Evaluate sigma, nu, and kernel fields at the dataset locations."""
    dec = pv.decoded()
    with np.errstate(over="ignore", under="ignore"):
        sigma = np.exp(0.5 * (dataset.design_matrix(design.std_dev) @ dec["std_dev"]))
        nu = nu_from_eta(dataset.design_matrix(design.smooth) @ dec["smooth"],
                         design.bounds)
        eta_sc = dataset.design_matrix(design.scale) @ dec["scale"]
        if design.taper.enabled:
            # scalar isotropic form: rho itself is the squared scale
            return LocalFields(sigma, nu, "iso", a=np.exp(eta_sc))
        if design.isotropic:
            return LocalFields(sigma, nu, "iso", a=np.exp(2.0 * eta_sc))
        rho2 = np.exp(2.0 * eta_sc)
        if design.aniso is not None:
            r = np.exp(dataset.design_matrix(design.aniso) @ dec["aniso"])
        else:
            r = np.ones(dataset.n)
        if design.tilt is not None:
            eta_tt = dataset.design_matrix(design.tilt) @ dec["tilt"]
            p = np.empty_like(eta_tt)
            pos = eta_tt >= 0
            p[pos] = 1.0 / (1.0 + np.exp(-eta_tt[pos]))
            e = np.exp(eta_tt[~pos])
            p[~pos] = e / (1.0 + e)
            omega = _clamp_omega(np.pi * p)
        else:
            omega = np.full(dataset.n, 0.5 * np.pi)
        cosw = np.cos(omega)
        return LocalFields(sigma, nu, "full", s11=rho2, s12=rho2 * r * cosw,
                           s22=rho2 * r * r)


def _check_finite_pairs(values, rows, cols):
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        k = bad[0]
        raise NumericalError(
            f"non-finite covariance entry between points {int(rows[k])} "
            f"and {int(cols[k])}"
        )


def _iso_pair_values(h2, f: LocalFields, i, j, sqrt8nu: bool) -> np.ndarray:
    ai, aj = f.a[i], f.a[j]
    avg = 0.5 * (ai + aj)
    pref = np.minimum(np.sqrt(ai * aj) / avg, 1.0)
    nubar = np.sqrt(f.nu[i] * f.nu[j])
    arg2 = h2 / avg
    if sqrt8nu:
        arg2 = 8.0 * nubar * arg2
    corr = _matern_shape(np.sqrt(arg2), nubar)
    return f.sigma[i] * f.sigma[j] * pref * corr


def _full_pair_values(dx, dy, f: LocalFields, i, j, sqrt8nu: bool) -> np.ndarray:
    A11 = 0.5 * (f.s11[i] + f.s11[j])
    A12 = 0.5 * (f.s12[i] + f.s12[j])
    A22 = 0.5 * (f.s22[i] + f.s22[j])
    adet = A11 * A22 - A12 * A12
    q = (A22 * dx * dx - 2.0 * A12 * dx * dy + A11 * dy * dy) / adet
    np.maximum(q, 0.0, out=q)
    det_i = f.s11 * f.s22 - f.s12 * f.s12
    pref = np.minimum((det_i[i] * det_i[j]) ** 0.25 / np.sqrt(adet), 1.0)
    nubar = np.sqrt(f.nu[i] * f.nu[j])
    arg = np.sqrt(q)
    if sqrt8nu:
        arg = np.sqrt(8.0 * nubar) * arg
    corr = _matern_shape(arg, nubar)
    return f.sigma[i] * f.sigma[j] * pref * corr


class CovarianceModel:
    """Binds a dataset and design; caches geometry, patterns, and design
    matrices so repeated assemblies only pay for parameter-dependent work."""

    def __init__(self, dataset: SpatialDataset, design: ModelDesign):
        design.validate_against(dataset)
        self.dataset = dataset
        self.design = design
        self.layout = ParameterLayout(design)
        self.X_mean = dataset.design_matrix(design.mean)
        n = dataset.n
        iu = np.triu_indices(n, 1)
        self._rows, self._cols = iu
        locs = dataset.locations
        diff = locs[iu[0]] - locs[iu[1]]
        self._h2 = (diff**2).sum(axis=1)
        self._dx = diff[:, 0] if dataset.d == 2 else None
        self._dy = diff[:, 1] if dataset.d == 2 else None
        self._pattern: Optional[SparsePattern] = None

    @property
    def pattern(self) -> SparsePattern:
        if self._pattern is None:
            if not self.design.taper.enabled:
                raise ValueError("design has no taper; no pattern to build")
            self._pattern = build_pattern(self.dataset.locations, self.design.taper)
        return self._pattern

    def fields(self, pv: ParameterVector) -> LocalFields:
        return local_fields(self.dataset, self.design, pv)

    def nugget_of(self, pv: ParameterVector) -> float:
        return pv.decoded()["nugget"]

    def assemble_dense(self, pv: ParameterVector,
                       nugget: Optional[float] = None) -> np.ndarray:
        f = self.fields(pv)
        n = self.dataset.n
        nug = self.nugget_of(pv) if nugget is None else float(nugget)
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            if f.kind == "iso":
                vals = _iso_pair_values(self._h2, f, self._rows, self._cols,
                                        self.design.sqrt8nu)
            else:
                vals = _full_pair_values(self._dx, self._dy, f, self._rows,
                                         self._cols, self.design.sqrt8nu)
            diag = f.sigma**2 + nug
        _check_finite_pairs(vals, self._rows, self._cols)
        if not np.all(np.isfinite(diag)):
            k = int(np.flatnonzero(~np.isfinite(diag))[0])
            raise NumericalError(f"non-finite variance at point {k}")
        C = np.empty((n, n))
        C[self._rows, self._cols] = vals
        C[self._cols, self._rows] = vals
        C[np.arange(n), np.arange(n)] = diag
        return C

    def assemble_tapered(self, pv: ParameterVector,
                         pattern: Optional[SparsePattern] = None,
                         nugget: Optional[float] = None) -> SparseSpd:
        if pattern is None:
            pattern = self.pattern
        taper = self.design.taper
        f = self.fields(pv)
        if f.kind != "iso":
            raise ValueError("tapered assembly requires the isotropic form")
        i, j = pattern.rows, pattern.cols
        nug = self.nugget_of(pv) if nugget is None else float(nugget)
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            vals = _iso_pair_values(pattern.h**2, f, i, j, self.design.sqrt8nu)
            vals = vals * pattern.taper_values(taper)
            if nug:
                vals = vals.copy()
                vals[pattern.diag_mask] += nug
        _check_finite_pairs(vals, i, j)
        return SparseSpd(pattern, vals)

    def assemble(self, pv: ParameterVector):
        if self.design.taper.enabled:
            return self.assemble_tapered(pv)
        return self.assemble_dense(pv)


def cov_block(design: ModelDesign,
              fields_a: LocalFields, locs_a: np.ndarray,
              fields_b: LocalFields, locs_b: np.ndarray,
              taper: Optional[TaperSpec] = None) -> np.ndarray:
    """Dense covariance block between two point sets under one design.

    With taper given (or taken from the design), entries are multiplied by the
    taper correlation of the separation, the one-taper construction used for
    prediction under a tapered model.
    """
    locs_a = np.atleast_2d(np.asarray(locs_a, dtype=float))
    locs_b = np.atleast_2d(np.asarray(locs_b, dtype=float))
    m, n = locs_a.shape[0], locs_b.shape[0]
    diff = locs_a[:, None, :] - locs_b[None, :, :]
    h2 = (diff**2).sum(axis=2).ravel()
    i = np.repeat(np.arange(m), n)
    j = np.tile(np.arange(n), m)
    fa, fb = fields_a, fields_b
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        if fa.kind == "iso":
            ai, bj = fa.a[i], fb.a[j]
            avg = 0.5 * (ai + bj)
            pref = np.minimum(np.sqrt(ai * bj) / avg, 1.0)
            q = h2 / avg
        else:
            A11 = 0.5 * (fa.s11[i] + fb.s11[j])
            A12 = 0.5 * (fa.s12[i] + fb.s12[j])
            A22 = 0.5 * (fa.s22[i] + fb.s22[j])
            adet = A11 * A22 - A12 * A12
            dx = diff[..., 0].ravel()
            dy = diff[..., 1].ravel() if diff.shape[2] == 2 else np.zeros_like(dx)
            q = (A22 * dx * dx - 2.0 * A12 * dx * dy + A11 * dy * dy) / adet
            det_a = fa.s11 * fa.s22 - fa.s12 * fa.s12
            det_b = fb.s11 * fb.s22 - fb.s12 * fb.s12
            pref = np.minimum((det_a[i] * det_b[j]) ** 0.25 / np.sqrt(adet), 1.0)
        np.maximum(q, 0.0, out=q)
        nubar = np.sqrt(fa.nu[i] * fb.nu[j])
        arg = np.sqrt(q)
        if design.sqrt8nu:
            arg = np.sqrt(8.0 * nubar) * arg
        vals = fa.sigma[i] * fb.sigma[j] * pref * _matern_shape(arg, nubar)
        spec = taper if taper is not None else design.taper
        if spec is not None and spec.enabled:
            vals = vals * taper_correlation(np.sqrt(h2), spec)
    _check_finite_pairs(vals, i, j)
    return vals.reshape(m, n)


def assemble_dense(dataset: SpatialDataset, design: ModelDesign,
                   pv: ParameterVector) -> np.ndarray:
    """One-shot dense covariance matrix (see CovarianceModel for reuse)."""
    return CovarianceModel(dataset, design).assemble_dense(pv)


def assemble_tapered(dataset: SpatialDataset, design: ModelDesign,
                     pv: ParameterVector,
                     pattern: Optional[SparsePattern] = None) -> SparseSpd:
    """One-shot tapered covariance on a (possibly shared) pattern."""
    model = CovarianceModel(dataset, design)
    return model.assemble_tapered(pv, pattern=pattern)
