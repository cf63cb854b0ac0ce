import math

import numpy as np
import numpy.testing as npt
import pytest

from nscov import SpatialDataset
from nscov.errors import DataError
from nscov.kernels import SmoothnessBounds, TaperSpec
from nscov.model import assemble_dense
from nscov.params import ModelDesign, ParameterVector, layout_for
from nscov.predict import krige, simulate

from tests.conftest import make_dataset


def random_pv(layout, seed=0, scale=0.25):
    rng = np.random.default_rng(seed)
    return ParameterVector(layout, scale * rng.standard_normal(layout.size))


def train_covs(ds, names):
    return {k: ds.covariates[k] for k in names}


def test_exact_interpolation_at_training_sites():
    ds = make_dataset(n=30, seed=30, covariates=("u",))
    design = ModelDesign(mean=("u",), std_dev=("u",), scale=("u",))
    pv = random_pv(layout_for(design), seed=31)
    pred = krige(ds, pv, ds.locations, train_covs(ds, ("u",)))
    scale = float(np.max(np.abs(ds.response)))
    npt.assert_allclose(pred.mean, ds.response, atol=1e-8 * max(scale, 1.0))
    # a noiseless process is known exactly where it was observed
    sig = np.exp(0.5 * ds.design_matrix(design.std_dev)
                 @ pv.values[pv.layout.slices["std_dev"]])
    assert np.all(pred.sd <= 1e-4 * sig)


def test_far_field_reverts_to_mean_model():
    ds = make_dataset(n=20, seed=32, covariates=("u",))
    design = ModelDesign(mean=("u",), std_dev=("u",))
    pv = random_pv(layout_for(design), seed=33)
    new_loc = np.array([[250.0, 250.0]])
    new_cov = {"u": np.array([0.7])}
    pred = krige(ds, pv, new_loc, new_cov)
    beta = pv.values[pv.layout.slices["mean"]]
    mean_model = beta[0] + 0.7 * beta[1]
    sig = math.exp(0.5 * (pv.values[pv.layout.index_of("std_dev")]
                          + 0.7 * pv.values[pv.layout.index_of("std_dev", "u")]))
    assert pred.mean[0] == pytest.approx(mean_model, abs=1e-12)
    assert pred.sd[0] == pytest.approx(sig, rel=1e-12)


def test_three_point_kriging_closed_form():
    loc = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    z = np.array([1.0, -0.5, 2.0])
    ds = SpatialDataset(loc, z, {})
    design = ModelDesign()  # nu = 1.5 at the smoothness midpoint, rho = 1
    lay = layout_for(design)
    vals = np.zeros(lay.size)
    vals[lay.index_of("mean")] = 0.3
    pv = ParameterVector(lay, vals)
    target = np.array([[0.25, 0.25]])

    def corr(a, b):
        t = math.sqrt(12.0) * np.linalg.norm(np.subtract(a, b))
        return (1.0 + t) * math.exp(-t)

    C = np.array([[corr(loc[i], loc[j]) for j in range(3)] for i in range(3)])
    c = np.array([corr(target[0], loc[j]) for j in range(3)])
    w = np.linalg.solve(C, z - 0.3)
    mu = 0.3 + c @ w
    var = 1.0 - c @ np.linalg.solve(C, c)

    pred = krige(ds, pv, target, {})
    assert pred.mean[0] == pytest.approx(mu, rel=1e-10)
    assert pred.sd[0] == pytest.approx(math.sqrt(var), rel=1e-10)


def test_variance_never_grows_with_more_data():
    rng = np.random.default_rng(34)
    loc = rng.uniform(0, 1, size=(16, 2))
    z = rng.standard_normal(16)
    design = ModelDesign()
    pv = ParameterVector.zeros(layout_for(design))
    target = np.array([[0.4, 0.6]])
    sd_small = krige(SpatialDataset(loc[:15], z[:15], {}), pv, target, {}).sd[0]
    sd_big = krige(SpatialDataset(loc, z, {}), pv, target, {}).sd[0]
    assert sd_big <= sd_small + 1e-12


def test_pure_mean_surface_is_reproduced():
    ds0 = make_dataset(n=25, seed=35, covariates=("u",))
    design = ModelDesign(mean=("u",), scale=("u",))
    lay = layout_for(design)
    vals = np.zeros(lay.size)
    vals[lay.index_of("mean")] = 1.2
    vals[lay.index_of("mean", "u")] = -0.7
    pv = ParameterVector(lay, vals)
    z = 1.2 - 0.7 * ds0.covariates["u"]
    ds = SpatialDataset(ds0.locations, z, ds0.covariates)
    new_loc = np.array([[0.11, 0.22], [0.93, 0.41]])
    new_cov = {"u": np.array([0.5, -1.5])}
    pred = krige(ds, pv, new_loc, new_cov)
    npt.assert_allclose(pred.mean, 1.2 - 0.7 * new_cov["u"], atol=1e-12)


def test_tapered_prediction_matches_dense_at_far_support():
    # with wendland1 support far beyond the domain the tapered model predicts
    # like the dense isotropic model with the same local scales; the dense
    # design stores half the log-scale coefficients to match conventions
    ds = make_dataset(n=40, seed=36, covariates=("u",))
    design_t = ModelDesign(std_dev=("u",), scale=("u",),
                           taper=TaperSpec("wendland1", 1e6))
    lay_t = layout_for(design_t)
    pv_t = random_pv(lay_t, seed=37)

    design_d = ModelDesign(std_dev=("u",), scale=("u",))
    lay_d = layout_for(design_d)
    vals_d = pv_t.values.copy()
    vals_d[lay_d.slices["scale"]] = 0.5 * vals_d[lay_d.slices["scale"]]
    pv_d = ParameterVector(lay_d, vals_d)

    new_loc = np.array([[0.2, 0.9], [0.66, 0.05], [0.5, 0.5]])
    new_cov = {"u": np.array([0.3, -0.8, 1.1])}
    p_t = krige(ds, pv_t, new_loc, new_cov)
    p_d = krige(ds, pv_d, new_loc, new_cov)
    npt.assert_allclose(p_t.mean, p_d.mean, rtol=1e-8, atol=1e-10)
    npt.assert_allclose(p_t.sd, p_d.sd, rtol=1e-8)


def test_full_cov_consistent_with_pointwise():
    ds = make_dataset(n=20, seed=38, covariates=("u",))
    design = ModelDesign(std_dev=("u",))
    pv = random_pv(layout_for(design), seed=39)
    new_loc = np.array([[0.15, 0.35], [0.8, 0.8], [0.45, 0.12]])
    new_cov = {"u": np.array([0.0, 1.0, -1.0])}
    p1 = krige(ds, pv, new_loc, new_cov)
    p2 = krige(ds, pv, new_loc, new_cov, full_cov=True)
    npt.assert_allclose(np.diag(p2.cov), p2.sd ** 2, rtol=1e-12)
    npt.assert_allclose(p2.mean, p1.mean, rtol=1e-12)
    npt.assert_allclose(p2.sd, p1.sd, rtol=1e-10)
    npt.assert_array_equal(p2.cov, p2.cov.T)


def test_nugget_adds_to_predictive_variance():
    ds = make_dataset(n=15, seed=40, covariates=())
    design = ModelDesign(nugget=True)
    lay = layout_for(design)
    vals = np.zeros(lay.size)
    vals[lay.index_of("nugget")] = math.log(0.2)
    pv = ParameterVector(lay, vals)
    new_loc = np.array([[0.5, 0.5]])
    p0 = krige(ds, pv, new_loc, {})
    p1 = krige(ds, pv, new_loc, {}, include_nugget=True)
    assert not p0.include_nugget and p1.include_nugget
    assert p1.sd[0] ** 2 - p0.sd[0] ** 2 == pytest.approx(0.2, rel=1e-10)


def test_krige_requires_covariates_and_response():
    ds = make_dataset(n=10, seed=41, covariates=("u",))
    design = ModelDesign(std_dev=("u",))
    pv = ParameterVector.zeros(layout_for(design))
    with pytest.raises(DataError):
        krige(ds, pv, np.array([[0.5, 0.5]]), {})  # missing covariate u
    ds_no_z = make_dataset(n=10, seed=41, covariates=("u",), response=False)
    with pytest.raises(DataError):
        krige(ds_no_z, pv, np.array([[0.5, 0.5]]), {"u": np.array([0.0])})


def test_simulate_deterministic_per_seed():
    ds = make_dataset(n=25, seed=42, covariates=("u",), response=False)
    design = ModelDesign(std_dev=("u",), nugget=True)
    pv = random_pv(layout_for(design), seed=43)
    z1 = simulate(ds.locations, ds.covariates, pv, seed=7)
    z2 = simulate(ds.locations, ds.covariates, pv, seed=7)
    z3 = simulate(ds.locations, ds.covariates, pv, seed=8)
    npt.assert_array_equal(z1, z2)
    assert not np.array_equal(z1, z3)


def test_simulate_collapses_to_mean_at_tiny_variance():
    ds = make_dataset(n=20, seed=44, covariates=("u",), response=False)
    design = ModelDesign(mean=("u",), std_dev=())
    lay = layout_for(design)
    vals = np.zeros(lay.size)
    vals[lay.index_of("mean")] = 2.0
    vals[lay.index_of("mean", "u")] = 0.5
    vals[lay.index_of("std_dev")] = -60.0
    pv = ParameterVector(lay, vals)
    z = simulate(ds.locations, ds.covariates, pv, seed=3)
    npt.assert_allclose(z, 2.0 + 0.5 * ds.covariates["u"], atol=1e-10)


def test_simulate_covariance_matches_model():
    loc = np.array([[0.1, 0.1], [0.3, 0.8], [0.55, 0.4], [0.7, 0.9],
                    [0.9, 0.15]])
    design = ModelDesign(bounds=SmoothnessBounds(1.0, 1.0))
    lay = layout_for(design)
    vals = np.zeros(lay.size)
    vals[lay.index_of("scale")] = math.log(0.4)
    pv = ParameterVector(lay, vals)
    ds = SpatialDataset(loc, None, {})
    C = assemble_dense(ds, pv.layout.design, pv)
    rng = np.random.default_rng(45)
    draws = np.array([simulate(loc, {}, pv, seed=rng) for _ in range(3000)])
    S = np.cov(draws.T)
    assert np.linalg.norm(S - C) / np.linalg.norm(C) < 0.05
    npt.assert_allclose(draws.mean(axis=0), 0.0, atol=0.05)
