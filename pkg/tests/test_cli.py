import json
import math
import pathlib
import subprocess
from types import SimpleNamespace

import numpy as np
import numpy.testing as npt
import pandas as pd
import pytest

from nscov import cli
from nscov.cli import (
    _load_run_config,
    _parse_taper,
    _thread_count,
    read_params_file,
    write_params_file,
)
from nscov.data import ColumnStats, load_csv
from nscov.errors import ConfigError
from nscov.kernels import TaperSpec
from nscov.params import ModelDesign, ParameterVector, layout_for
from nscov.predict import krige

from tests.conftest import DATA_DIR

GOLDEN = json.loads((pathlib.Path(DATA_DIR) / "golden_stationary.json")
                    .read_text())
TRAIN_CSV = str(pathlib.Path(DATA_DIR) / "synthetic200.csv")

STATIONARY_CONFIG = f"""
[data]
csv = {TRAIN_CSV}
coords = x, y
response = z

[design.smooth]
nu_min = 1.0
nu_max = 1.0
"""


@pytest.fixture(scope="module")
def stationary_fit(tmp_path_factory):
    """One fitted run of the packaged stationary dataset, via the installed
    console script so the entry point is exercised end to end."""
    root = tmp_path_factory.mktemp("fit")
    cfg = root / "run.ini"
    cfg.write_text(STATIONARY_CONFIG)
    out = root / "out"
    proc = subprocess.run(
        ["nscov", "fit", "--config", str(cfg), "--out", str(out), "--no-se"],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "loglik" in proc.stdout
    return SimpleNamespace(cfg=str(cfg), out=out,
                           report=json.loads((out / "fit.json").read_text()),
                           params=str(out / "params.json"))


def test_fit_reproduces_reference_optimum(stationary_fit):
    rep = stationary_fit.report
    assert rep["converged"]
    assert rep["loglik"] == pytest.approx(GOLDEN["fit"]["loglik"], abs=1e-6)
    beta0 = rep["decoded"]["mean"][0]
    assert beta0 == pytest.approx(GOLDEN["fit"]["beta0"], abs=1e-4)
    sig2 = math.exp(rep["decoded"]["std_dev"][0])
    gamma = math.exp(rep["decoded"]["scale"][0])
    micro = sig2 / gamma ** 2
    assert micro == pytest.approx(GOLDEN["fit"]["microergodic"], rel=1e-4)
    assert rep["n"] == 200
    assert rep["condition_estimate"] > 1.0


def test_predict_matches_reference_kriging(stationary_fit, tmp_path):
    pred_csv = tmp_path / "sites.csv"
    pred_csv.write_text("x,y\n" + "".join(
        f"{float(x)!r},{float(y)!r}\n" for x, y in GOLDEN["pred_sites"]))
    out_csv = tmp_path / "pred.csv"
    rc = cli.main(["predict", "--params", stationary_fit.params,
                   "--data", str(pred_csv), "--out", str(out_csv)])
    assert rc == 0
    got = pd.read_csv(out_csv)
    npt.assert_allclose(got["mean"], GOLDEN["pred_mean"], atol=1e-6)
    npt.assert_allclose(got["sd"], GOLDEN["pred_sd"], atol=1e-6)


def test_predict_reproduces_training_response(stationary_fit, tmp_path):
    out_csv = tmp_path / "train_pred.csv"
    rc = cli.main(["predict", "--params", stationary_fit.params,
                   "--data", TRAIN_CSV, "--out", str(out_csv)])
    assert rc == 0
    got = pd.read_csv(out_csv)
    train = pd.read_csv(TRAIN_CSV)
    npt.assert_allclose(got["mean"], train["z"], atol=1e-8)
    assert got["sd"].max() < 1e-4


def test_predict_round_trip_is_bitwise(stationary_fit, tmp_path):
    sites = tmp_path / "sites.csv"
    sites.write_text("x,y\n0.21,0.43\n0.64,0.88\n0.111,0.999\n")
    out1, out2 = tmp_path / "p1.csv", tmp_path / "p2.csv"
    assert cli.main(["predict", "--params", stationary_fit.params,
                     "--data", str(sites), "--out", str(out1),
                     "--threads", "1"]) == 0
    assert cli.main(["predict", "--params", stationary_fit.params,
                     "--data", str(sites), "--out", str(out2),
                     "--threads", "1"]) == 0
    assert out1.read_bytes() == out2.read_bytes()

    # the emitted 17-significant-digit floats equal the in-memory prediction
    # (same BLAS thread cap as the command, so the arithmetic is identical)
    pv, design, record, meta = read_params_file(stationary_fit.params)
    train = load_csv(meta["train_csv"], meta["coords"],
                     design.all_covariates(), meta["response"], record=record)
    new = load_csv(str(sites), meta["coords"], design.all_covariates(),
                   response_col=None, record=record)
    with cli._thread_limit(1):
        pred = krige(train, pv, new_covariates=new)
    got = pd.read_csv(out1, float_precision="round_trip")
    npt.assert_array_equal(got["mean"].to_numpy(), pred.mean)
    npt.assert_array_equal(got["sd"].to_numpy(), pred.sd)


def test_params_file_round_trip(tmp_path):
    design = ModelDesign(mean=("u",), std_dev=("u",), nugget=True,
                         reparameterize=True)
    lay = layout_for(design)
    rng = np.random.default_rng(90)
    pv = ParameterVector(lay, rng.standard_normal(lay.size))
    record = {"u": ColumnStats(mean=1.5, sd=2.0, log=False, source="u")}
    path = tmp_path / "params.json"
    write_params_file(str(path), pv, design, record, ("x", "y"), "z",
                      train_csv="train.csv")
    pv2, design2, record2, meta = read_params_file(str(path))
    assert design2 == design
    npt.assert_array_equal(pv2.values, pv.values)
    assert record2 == record
    assert meta == {"coords": ("x", "y"), "response": "z",
                    "train_csv": "train.csv"}


def test_params_file_rejects_unknown_format(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"format": "other"}))
    with pytest.raises(ConfigError, match="format"):
        read_params_file(str(path))
    path.write_text("not json at all {")
    with pytest.raises(ConfigError, match="JSON"):
        read_params_file(str(path))


def test_tune_writes_single_row_table(tmp_path):
    frame = pd.read_csv(TRAIN_CSV).head(80)
    small = tmp_path / "small.csv"
    frame.to_csv(small, index=False)
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"""
[data]
csv = {small}
coords = x, y
response = z
seed = 2

[design.smooth]
nu_min = 1.0
nu_max = 1.0

[penalties]
lambda_r_grid = 0.01

[optimizer]
max_iterations = 80
""")
    out = tmp_path / "tuned"
    assert cli.main(["tune", "--config", str(cfg), "--out", str(out)]) == 0
    table = pd.read_csv(out / "tune.csv")
    assert len(table) == 1
    row = table.iloc[0]
    assert row["lambda_r"] == 0.01
    assert row["status"] == "ok"
    assert row["chosen"] == 1
    assert np.isfinite(row["crps"])


def test_simulate_deterministic_and_loadable(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("""
[data]
coords = x, y
response = z
seed = 9

[design.mean]
covariates = log(u)

[design.scale]
covariates = log(u)

[truth]
mean = 1.0
mean.log(u) = 0.8
scale = -1.2
std_dev = 0.2
""")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(a),
                     "--n", "120"]) == 0
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(b),
                     "--n", "120"]) == 0
    assert a.read_bytes() == b.read_bytes()
    frame = pd.read_csv(a)
    assert list(frame.columns) == ["x", "y", "u", "z"]
    assert len(frame) == 120
    assert (frame["u"] > 0).all()  # raw source column for the log covariate
    ds = load_csv(str(a), ("x", "y"), ("log(u)",), "z")
    assert ds.n == 120


def test_exit_code_config_error(tmp_path):
    assert cli.main(["fit", "--config", str(tmp_path / "none.ini"),
                     "--out", str(tmp_path)]) == 2
    cfg = tmp_path / "ok.ini"
    cfg.write_text(STATIONARY_CONFIG)
    assert cli.main(["simulate", "--config", str(cfg)]) == 2  # no --out


def test_exit_code_data_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y,w\n0,0,1\n1,1,2\n")
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"[data]\ncsv = {bad}\ncoords = x, y\nresponse = z\n")
    assert cli.main(["fit", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == 3


def test_exit_code_numerical_error(tmp_path):
    # a parameter file whose variance slope overflows cannot krige
    design = ModelDesign(std_dev=("u",))
    lay = layout_for(design)
    vals = np.zeros(lay.size)
    vals[lay.index_of("std_dev", "u")] = 1e4
    pv = ParameterVector(lay, vals)
    record = {"u": ColumnStats(mean=0.0, sd=1.0, log=False, source="u")}
    train = tmp_path / "train.csv"
    train.write_text("x,y,z,u\n0.1,0.1,1.0,1.0\n0.8,0.3,2.0,-1.0\n"
                     "0.4,0.9,0.5,2.0\n")
    params = tmp_path / "params.json"
    write_params_file(str(params), pv, design, record, ("x", "y"), "z",
                      train_csv=str(train))
    sites = tmp_path / "sites.csv"
    sites.write_text("x,y,u\n0.5,0.5,0.0\n")
    assert cli.main(["predict", "--params", str(params),
                     "--data", str(sites), "--out",
                     str(tmp_path / "p.csv")]) == 4


def test_thread_count_resolution(monkeypatch):
    monkeypatch.delenv("NSCOV_THREADS", raising=False)
    assert _thread_count(SimpleNamespace(threads=2)) == 2
    monkeypatch.setenv("NSCOV_THREADS", "3")
    assert _thread_count(SimpleNamespace(threads=None)) == 3
    assert _thread_count(SimpleNamespace(threads=1)) == 1  # flag wins
    monkeypatch.setenv("NSCOV_THREADS", "many")
    with pytest.raises(ConfigError, match="NSCOV_THREADS"):
        _thread_count(SimpleNamespace(threads=None))
    with pytest.raises(ConfigError, match=">= 1"):
        _thread_count(SimpleNamespace(threads=0))


def test_taper_override(tmp_path):
    assert _parse_taper("wendland1:0.3") == TaperSpec("wendland1", 0.3)
    assert _parse_taper("none") == TaperSpec(None)
    with pytest.raises(ConfigError):
        _parse_taper("wendland1")
    with pytest.raises(ConfigError):
        _parse_taper("wendland1:soon")
    cfg = tmp_path / "run.ini"
    cfg.write_text(STATIONARY_CONFIG)
    args = SimpleNamespace(config=str(cfg), taper="spherical:0.4", seed=None)
    rc = _load_run_config(args)
    assert rc.design.taper == TaperSpec("spherical", 0.4)
    args = SimpleNamespace(config=str(cfg), taper=None, seed=5)
    assert _load_run_config(args).design.seed == 5
