"""Batch command-line front end.

Subcommands:

    simulate   draw one realization of the configured model; without --data a
               synthetic site pattern is generated (random points plus
               axis-aligned stripes and small Gaussian clusters, a documented
               approximation of survey-style sampling for pipeline testing)
    fit        fit the configured model to a CSV, writing a JSON fit report
               and a reusable text parameter file
    predict    krige at new sites from a parameter file plus the training CSV
    tune       grid search of the penalty weights on a random holdout,
               writing the per-cell CRPS table with the chosen cell flagged
    score      evaluate predictions on scoring data against a fitted model,
               writing report.json / report.txt
    study      run a packaged synthetic study by id

Common flags: --config PATH, --data PATH, --out PATH, --threads N, --seed N,
--taper FAMILY:DELTA (overrides the config's taper). The environment variable
NSCOV_THREADS is the fallback for --threads (default: machine cores).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. Error messages name the offending field, file, or row.

All emitted CSV is comma-separated, '.' decimal, UTF-8, with a mandatory
header; floats carry 17 significant digits so values round-trip exactly.
A fit -> parameter file -> predict pipeline reproduces the in-memory
prediction bit for bit.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import os
import sys
import time
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import (OptimizerConfig, RunConfig, design_from_sections,
                     design_to_sections, load_config, load_truth)
from .data import ColumnStats, SpatialDataset, load_csv, parse_covariate, \
    standardize
from .errors import ConfigError, DataError, NumericalError
from .kernels import TaperSpec
from .likelihood import LikelihoodEvaluator
from .linalg import IndefiniteError, condition_estimate
from .optimize import hessian_fd, standard_errors
from .params import ModelDesign, ParameterVector, PenaltyConfig, layout_for
from .predict import krige, simulate
from .scoring import cluster_holdout, score_report
from .selection import penalized_fit, tune, two_stage_fit
from .experiments import StudySpec, run_study, STUDY_IDS

FLOAT_FMT = "%.17g"


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return FLOAT_FMT % v
    return str(v)


def _jsonable(v):
    if v is None or isinstance(v, (bool, int, str)):
        return v
    if isinstance(v, (float, np.floating, np.integer)):
        return float(v)
    if isinstance(v, np.ndarray):
        return [_jsonable(w) for w in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_jsonable(w) for w in v]
    if isinstance(v, dict):
        return {k: _jsonable(w) for k, w in v.items()}
    return str(v)


def _write_csv(path: str, header: Sequence[str], columns) -> None:
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _thread_count(args) -> int:
    n = getattr(args, "threads", None)
    if n is None:
        env = os.environ.get("NSCOV_THREADS", "").strip()
        if env:
            try:
                n = int(env)
            except ValueError:
                raise ConfigError(
                    f"NSCOV_THREADS must be an integer, got {env!r}") from None
    if n is None:
        n = os.cpu_count() or 1
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    return n


@contextlib.contextmanager
def _thread_limit(n: int):
    """Cap BLAS/LAPACK pools (matrix assembly and factorization work)."""
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=n):
        yield


def _parse_taper(text: str) -> TaperSpec:
    text = text.strip()
    if text.lower() in ("none", ""):
        return TaperSpec(None)
    family, sep, delta = text.partition(":")
    if not sep:
        raise ConfigError(
            f"--taper expects FAMILY:DELTA or 'none', got {text!r}")
    try:
        d = float(delta)
    except ValueError:
        raise ConfigError(f"--taper delta is not a number: {delta!r}") from None
    try:
        return TaperSpec(family.strip(), d)
    except ValueError as err:
        raise ConfigError(f"--taper: {err}") from None


def _load_run_config(args) -> RunConfig:
    if not getattr(args, "config", None):
        raise ConfigError("this subcommand requires --config")
    rc = load_config(args.config)
    design = rc.design
    if getattr(args, "taper", None) is not None:
        try:
            design = dataclasses.replace(design, taper=_parse_taper(args.taper))
        except ConfigError:
            raise
        except Exception as err:  # design invariants (taper vs aniso/tilt)
            raise ConfigError(str(err)) from None
    if getattr(args, "seed", None) is not None:
        design = dataclasses.replace(design, seed=args.seed)
        rc = RunConfig(data=dataclasses.replace(rc.data, seed=args.seed),
                       design=design, optimizer=rc.optimizer, grid=rc.grid)
    else:
        rc = RunConfig(data=rc.data, design=design, optimizer=rc.optimizer,
                       grid=rc.grid)
    return rc


def _data_path(args, rc: RunConfig) -> str:
    path = getattr(args, "data", None) or rc.data.csv
    if not path:
        raise ConfigError("no data file: pass --data or set [data] csv")
    return path


def _load_dataset(args, rc: RunConfig, response: bool = True,
                  record=None) -> SpatialDataset:
    names = rc.design.all_covariates()
    return load_csv(_data_path(args, rc), rc.data.coords, names,
                    response_col=rc.data.response if response else None,
                    record=record)


# -- parameter file ---------------------------------------------------------

PARAMS_FORMAT = "nscov-params-v1"


def write_params_file(path: str, pv: ParameterVector, design: ModelDesign,
                      record: Dict[str, ColumnStats], coords: Sequence[str],
                      response: Optional[str],
                      train_csv: Optional[str] = None) -> None:
    layout = pv.layout
    doc = {
        "format": PARAMS_FORMAT,
        "coords": list(coords),
        "response": response,
        "design": design_to_sections(design),
        "values": {f"{comp}.{name}": float(v)
                   for (comp, name, _), v in zip(layout.entries, pv.values)},
        "record": {name: {"mean": st.mean, "sd": st.sd, "log": st.log,
                          "source": st.source}
                   for name, st in record.items()},
    }
    if train_csv:
        doc["train_csv"] = str(train_csv)
    _write_json(path, doc)


def read_params_file(path: str):
    """Returns (pv, design, record, meta). Inverse of write_params_file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read parameter file {path}: {err}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path} is not valid JSON: {err}") from None
    if doc.get("format") != PARAMS_FORMAT:
        raise ConfigError(f"{path}: unknown parameter file format "
                          f"{doc.get('format')!r}")
    for key in ("design", "values", "coords", "record"):
        if key not in doc:
            raise ConfigError(f"{path}: missing key {key!r}")
    design = design_from_sections(doc["design"])
    layout = layout_for(design)
    vals = np.empty(layout.size)
    for k, (comp, name, _) in enumerate(layout.entries):
        key = f"{comp}.{name}"
        if key not in doc["values"]:
            raise ConfigError(f"{path}: missing parameter value {key!r}")
        vals[k] = float(doc["values"][key])
    record = {}
    for name, st in doc["record"].items():
        try:
            record[name] = ColumnStats(mean=float(st["mean"]),
                                       sd=float(st["sd"]), log=bool(st["log"]),
                                       source=str(st.get("source", name)))
        except (KeyError, TypeError) as err:
            raise ConfigError(
                f"{path}: bad standardization record for {name!r}: {err}") from None
    meta = {"coords": tuple(doc["coords"]), "response": doc.get("response"),
            "train_csv": doc.get("train_csv")}
    return ParameterVector(layout, vals), design, record, meta


# -- simulate ----------------------------------------------------------------

def _pattern_sites(n: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-square site pattern: 70% uniform points, 15% in two vertical
    stripes of differing widths, 15% in three small Gaussian clusters."""
    n_stripe = int(round(0.15 * n))
    n_clust = int(round(0.15 * n))
    n_rand = n - n_stripe - n_clust
    pts = [rng.uniform(size=(n_rand, 2))]
    centers = rng.uniform(0.15, 0.85, size=2)
    widths = (0.02, 0.06)
    j = np.arange(n_stripe) % 2
    stripes = np.column_stack([
        centers[j] + widths[0] * (j == 0) * (rng.uniform(size=n_stripe) - 0.5)
        + widths[1] * (j == 1) * (rng.uniform(size=n_stripe) - 0.5),
        rng.uniform(size=n_stripe),
    ])
    pts.append(stripes)
    cc = rng.uniform(0.15, 0.85, size=(3, 2))
    k = np.arange(n_clust) % 3
    pts.append(cc[k] + 0.02 * rng.standard_normal((n_clust, 2)))
    sites = np.vstack(pts)
    return np.clip(sites, 0.0, 1.0)


def cmd_simulate(args) -> int:
    rc = _load_run_config(args)
    design = rc.design
    if not args.out:
        raise ConfigError("simulate requires --out CSV")
    layout = layout_for(design)
    pv = ParameterVector.zeros(layout)
    if args.params:
        pv, design, _, _ = read_params_file(args.params)
        layout = pv.layout
    else:
        truth = load_truth(args.config)
        vals = pv.values.copy()
        for key, value in truth.items():
            comp, _, name = key.partition(".")
            try:
                idx = layout.index_of(comp, name or "(intercept)")
            except (KeyError, ValueError):
                raise ConfigError(
                    f"[truth] {key}: no such parameter in this design") from None
            vals[idx] = value
        pv = pv.with_values(vals)

    rng = np.random.default_rng(rc.data.seed)
    names = design.all_covariates()
    if args.data:
        # covariates standardized through the regular loader drive the draw;
        # the raw source columns are copied through so the emitted file can
        # feed fit/predict unchanged
        import pandas as pd
        ds = _load_dataset(args, rc, response=False)
        loc = ds.locations
        covs = {name: ds.covariates[name] for name in names}
        frame = pd.read_csv(_data_path(args, rc))
        raw_cols = {}
        for name in names:
            source, _ = parse_covariate(name)
            raw_cols[source] = frame[source].to_numpy(dtype=float)
    else:
        loc = _pattern_sites(args.n, rng)
        if len(rc.data.coords) == 1:
            loc = loc[:, :1]
        covs = {}
        raw_cols = {}
        for name in names:
            g = rng.standard_normal(loc.shape[0])
            source, log = parse_covariate(name)
            raw_cols[source] = np.exp(g) if log else g
            covs[name], _ = standardize(raw_cols[source], name, log=log)
    z = simulate(loc, covs, pv, seed=rng)
    coords = list(rc.data.coords)[: loc.shape[1]]
    header = coords + list(raw_cols) + [rc.data.response or "z"]
    columns = [loc[:, i] for i in range(loc.shape[1])]
    columns += [raw_cols[c] for c in raw_cols]
    columns.append(z)
    _write_csv(args.out, header, columns)
    print(f"wrote {loc.shape[0]} rows to {args.out}")
    return 0


# -- fit ----------------------------------------------------------------------

def _active_objective(evaluator: LikelihoodEvaluator, cfg, mask, x_star):
    base = x_star.copy()

    def objective(sub):
        full = base.copy()
        full[mask] = sub
        return evaluator.penalized(full, cfg)

    return objective


def _standard_errors_at(evaluator, cfg, mask, x_star):
    layout = evaluator.layout
    lower, upper = layout.default_bounds()
    obj = _active_objective(evaluator, cfg, mask, x_star)
    H = hessian_fd(obj, x_star[mask], lower=lower[mask], upper=upper[mask])
    se_sub, message = standard_errors(H)
    if se_sub is None:
        return None, message
    se = np.full(layout.size, np.nan)
    se[mask] = se_sub
    return se, message


def cmd_fit(args) -> int:
    rc = _load_run_config(args)
    design = rc.design
    if not args.out:
        raise ConfigError("fit requires --out DIR")
    os.makedirs(args.out, exist_ok=True)
    dataset = _load_dataset(args, rc)
    design.validate_against(dataset)
    evaluator = LikelihoodEvaluator(dataset, design)
    layout = evaluator.layout
    cfg = design.penalties
    mode = rc.optimizer.two_stage
    use_two_stage = (cfg.lambda_mu > 0 or cfg.lambda_sigma > 0) \
        if mode == "auto" else (mode == "true")

    t0 = time.perf_counter()
    if use_two_stage:
        result, active = two_stage_fit(dataset, design, cfg=cfg,
                                       evaluator=evaluator,
                                       max_iterations=rc.optimizer.max_iterations)
        mask = active.mask
    else:
        result = penalized_fit(dataset, design, cfg=cfg, evaluator=evaluator,
                               max_iterations=rc.optimizer.max_iterations)
        active = None
        mask = np.ones(layout.size, dtype=bool)
    pv = ParameterVector(layout, result.x)

    se, se_message = (None, "skipped (--no-se)")
    if not args.no_se:
        se, se_message = _standard_errors_at(evaluator, cfg, mask, result.x)
    cond = float(condition_estimate(evaluator.model.assemble(pv)))
    wall = time.perf_counter() - t0

    names = [f"{comp}.{name}" for comp, name, _ in layout.entries]
    report = {
        "n": dataset.n,
        "d": dataset.d,
        "data": _data_path(args, rc),
        "two_stage": use_two_stage,
        "converged": bool(result.converged),
        "message": result.message,
        "iterations": int(result.iterations),
        "evaluations": int(result.evaluations),
        "loglik": float(evaluator.loglik(result.x)),
        "penalized_loglik": float(result.fun),
        "estimates": {nm: float(v) for nm, v in zip(names, result.x)},
        "decoded": _jsonable(pv.decoded()),
        "standard_errors": None if se is None else
            {nm: (None if not np.isfinite(s) else float(s))
             for nm, s in zip(names, se)},
        "se_message": se_message,
        "active_set": [nm for nm, m in zip(names, mask) if m],
        "condition_estimate": cond,
        "wall_time_s": wall,
        "design": design_to_sections(design),
    }
    report_path = os.path.join(args.out, "fit.json")
    _write_json(report_path, report)
    params_path = os.path.join(args.out, "params.json")
    write_params_file(params_path, pv, design, dataset.record,
                      rc.data.coords, rc.data.response,
                      train_csv=_data_path(args, rc))
    print(f"fit: loglik {report['loglik']:.6f}, "
          f"{'converged' if result.converged else 'NOT converged'} after "
          f"{result.iterations} iterations; wrote {report_path} and {params_path}")
    return 0


# -- predict -------------------------------------------------------------------

def _load_train_for(args, pv, design, record, meta) -> SpatialDataset:
    train_csv = getattr(args, "train", None) or meta.get("train_csv")
    if not train_csv:
        raise ConfigError("no training data: pass --train (the parameter file "
                          "records none)")
    if meta.get("response") is None:
        raise ConfigError("parameter file records no response column name")
    return load_csv(train_csv, meta["coords"], design.all_covariates(),
                    response_col=meta["response"], record=record)


def cmd_predict(args) -> int:
    if not args.params:
        raise ConfigError("predict requires --params FILE")
    if not args.data:
        raise ConfigError("predict requires --data CSV of prediction sites")
    if not args.out:
        raise ConfigError("predict requires --out CSV")
    pv, design, record, meta = read_params_file(args.params)
    train = _load_train_for(args, pv, design, record, meta)
    sites = load_csv(args.data, meta["coords"], design.all_covariates(),
                     response_col=None, record=record)
    pred = krige(train, pv, new_covariates=sites,
                 include_nugget=args.include_nugget)
    coords = list(meta["coords"])
    header = coords + ["mean", "sd"]
    columns = [sites.locations[:, i] for i in range(sites.d)]
    columns += [pred.mean, pred.sd]
    _write_csv(args.out, header, columns)
    print(f"wrote {sites.n} predictions to {args.out}")
    return 0


# -- tune ----------------------------------------------------------------------

def cmd_tune(args) -> int:
    rc = _load_run_config(args)
    design = rc.design
    if not args.out:
        raise ConfigError("tune requires --out DIR")
    os.makedirs(args.out, exist_ok=True)
    dataset = _load_dataset(args, rc)
    design.validate_against(dataset)
    rng = np.random.default_rng(rc.data.seed)
    n = dataset.n
    n_hold = max(1, int(round(rc.grid.fraction * n)))
    if n_hold >= n:
        raise DataError(f"tune holdout fraction {rc.grid.fraction} leaves no "
                        f"training rows (n={n})")
    perm = rng.permutation(n)
    hold = dataset.subset(np.sort(perm[:n_hold]))
    train = dataset.subset(np.sort(perm[n_hold:]))

    result = tune(train, design, rc.grid, hold,
                  max_iterations=rc.optimizer.max_iterations)
    header = ["lambda_r", "lambda_mu", "lambda_sigma", "crps", "active_size",
              "status", "wall_time", "chosen"]
    rows = result.rows
    chosen_flags = [1 if i == result.chosen_index else 0
                    for i in range(len(rows))]
    cols = [[r["lambda_r"] for r in rows], [r["lambda_mu"] for r in rows],
            [r["lambda_sigma"] for r in rows], [r["crps"] for r in rows],
            [-1 if r["active_size"] is None else r["active_size"]
             for r in rows],
            [str(r["status"]).replace(",", ";") for r in rows],
            [r["wall_time"] for r in rows], chosen_flags]
    path = os.path.join(args.out, "tune.csv")
    _write_csv(path, header, cols)
    ch = result.chosen
    print(f"chosen: lambda_r={ch.lambda_r:g} lambda_mu={ch.lambda_mu:g} "
          f"lambda_sigma={ch.lambda_sigma:g}; wrote {path}")
    return 0


# -- score ----------------------------------------------------------------------

def cmd_score(args) -> int:
    if not args.params:
        raise ConfigError("score requires --params FILE")
    if not args.data:
        raise ConfigError("score requires --data CSV with the response")
    if not args.out:
        raise ConfigError("score requires --out DIR")
    os.makedirs(args.out, exist_ok=True)
    pv, design, record, meta = read_params_file(args.params)
    train = _load_train_for(args, pv, design, record, meta)
    holdout = load_csv(args.data, meta["coords"], design.all_covariates(),
                       response_col=meta["response"], record=record)
    pred = krige(train, pv, new_covariates=holdout)
    nug = pv.decoded().get("nugget", 0.0)
    sd_data = np.sqrt(pred.sd ** 2 + nug) if nug > 0 else None
    seed = args.seed if args.seed is not None else design.seed
    k = args.k
    if k > holdout.n:
        raise DataError(f"--k {k} exceeds the {holdout.n} scoring sites")
    clusters = cluster_holdout(holdout.locations, k=k, seed=seed)
    report = score_report(pred.mean, np.maximum(pred.sd, 1e-12),
                          holdout.response, clusters,
                          pred_sd_data_scale=sd_data, k=k, seed=seed)
    _write_json(os.path.join(args.out, "report.json"), report.to_dict())
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.text_table())
        fh.write("\n")
    print(report.text_table())
    return 0


# -- study ----------------------------------------------------------------------

def cmd_study(args) -> int:
    if not args.out:
        raise ConfigError("study requires --out DIR")
    spec = StudySpec(args.id, replicates=args.replicates,
                     seed=args.seed if args.seed is not None else 0,
                     out_dir=args.out)
    payload = run_study(spec)
    for f in payload.get("files", []):
        print(f"wrote {f}")
    return 0


# -- entry ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nscov",
        description="Fit, select, predict, and score covariate-driven "
                    "nonstationary Gaussian-process models.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--data", help="input CSV")
        p.add_argument("--out", help=out_help)
        p.add_argument("--threads", type=int, default=None,
                       help="BLAS thread cap (default: NSCOV_THREADS or cores)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured seed")
        p.add_argument("--taper", default=None, metavar="FAMILY:DELTA",
                       help="override the configured taper, e.g. wendland1:0.3 "
                            "or none")

    p = sub.add_parser("simulate", help="draw one realization")
    common(p, "output CSV path")
    p.add_argument("--n", type=int, default=400,
                   help="site count when no --data is given (default 400)")
    p.add_argument("--params", help="parameter file supplying the truth "
                                    "(otherwise the config's [truth] section)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the configured model")
    common(p, "output directory (fit.json, params.json)")
    p.add_argument("--no-se", action="store_true",
                   help="skip the standard-error pass")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="krige at new sites")
    common(p, "output CSV path")
    p.add_argument("--params", help="parameter file from a fit")
    p.add_argument("--train", help="training CSV (default: recorded in the "
                                   "parameter file)")
    p.add_argument("--include-nugget", action="store_true",
                   help="report sd on the observation scale")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("tune", help="penalty grid search")
    common(p, "output directory (tune.csv)")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("score", help="scored holdout report")
    common(p, "output directory (report.json, report.txt)")
    p.add_argument("--params", help="parameter file from a fit")
    p.add_argument("--train", help="training CSV (default: recorded in the "
                                   "parameter file)")
    p.add_argument("--k", type=int, default=100,
                   help="number of site clusters (default 100)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("study", help="run a packaged synthetic study")
    p.add_argument("id", choices=STUDY_IDS)
    common(p, "output directory")
    p.add_argument("--replicates", type=int, default=1)
    p.set_defaults(func=cmd_study)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit(_thread_count(args)):
            return args.func(args)
    except ConfigError as err:
        print(f"nscov: config error: {err}", file=sys.stderr)
        return 2
    except DataError as err:
        print(f"nscov: data error: {err}", file=sys.stderr)
        return 3
    except (NumericalError, IndefiniteError) as err:
        print(f"nscov: numerical failure: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
