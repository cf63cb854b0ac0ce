"""Sectioned key-value config files describing a run.

Schema (all sections optional unless noted):

    [data]              csv=PATH  coords=lon,lat  response=z
                        nugget=false  reparameterize=false  sqrt8nu=true
                        seed=0
    [design.mean]       covariates = x1, log(x2)
    [design.std_dev]    covariates = ...
    [design.scale]      covariates = ...
    [design.aniso]      covariates = ...     (section present = enabled)
    [design.tilt]       covariates = ...     (section present = enabled)
    [design.smooth]     covariates = ...  nu_min=0.5  nu_max=2.5
    [taper]             family = none|spherical|wendland1|wendland2  delta = 0.5
    [penalties]         lambda_r=0 lambda_mu=0 lambda_sigma=0 kappa=1e6
                        epsilon=1e-4
                        lambda_r_grid=0,0.01,0.1 (tune)  lambda_mu_grid=...
                        lambda_sigma_grid=...  tune_fraction=0.30
    [optimizer]         max_iterations=200  gtol=1e-5  ftol=1e-9
                        two_stage=auto|true|false

Covariate names wrapped as log(col) request a log transform of the raw column
before standardization. Missing design sections mean intercept-only (mean,
std_dev, scale, smooth) or disabled (aniso, tilt).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import Optional, Tuple

from .errors import ConfigError
from .kernels import SmoothnessBounds, TaperSpec
from .params import ModelDesign, PenaltyConfig
from .selection import TuneGrid

__all__ = ["RunConfig", "DataConfig", "OptimizerConfig", "load_config",
           "load_truth", "design_to_sections", "design_from_sections"]


@dataclass
class DataConfig:
    csv: Optional[str] = None
    coords: Tuple[str, ...] = ("x", "y")
    response: Optional[str] = "z"
    seed: int = 0


@dataclass
class OptimizerConfig:
    max_iterations: int = 200
    gtol: float = 1e-5
    ftol: float = 1e-9
    two_stage: str = "auto"


@dataclass
class RunConfig:
    data: DataConfig
    design: ModelDesign
    optimizer: OptimizerConfig
    grid: TuneGrid = field(default_factory=TuneGrid)


def _names(section, key: str = "covariates") -> Tuple[str, ...]:
    raw = section.get(key, "").strip()
    if not raw:
        return ()
    return tuple(s.strip() for s in raw.split(",") if s.strip())


def _float(section, key: str, default: float) -> float:
    raw = section.get(key)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError as err:
        raise ConfigError(f"[{section.name}] {key}: not a number ({raw!r})") from err


def _int(section, key: str, default: int) -> int:
    raw = section.get(key)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError as err:
        raise ConfigError(f"[{section.name}] {key}: not an integer ({raw!r})") from err


def _bool(section, key: str, default: bool) -> bool:
    raw = section.get(key)
    if raw is None:
        return default
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{section.name}] {key}: not a boolean ({raw!r})")


def _axis(section, key: str, fallback: float) -> Tuple[float, ...]:
    raw = section.get(key, "").strip()
    if not raw:
        return (fallback,)
    try:
        return tuple(float(s) for s in raw.split(",") if s.strip())
    except ValueError as err:
        raise ConfigError(f"[{section.name}] {key}: bad number list ({raw!r})") from err


def load_config(path: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        read = parser.read(path)
    except configparser.Error as err:
        raise ConfigError(f"cannot parse config {path}: {err}") from err
    if not read:
        raise ConfigError(f"config file not found: {path}")

    empty = {}
    def sec(name):
        return parser[name] if parser.has_section(name) else empty

    d = sec("data")
    coords = _names(d, "coords") if hasattr(d, "name") and d.get("coords") else None
    data = DataConfig(
        csv=d.get("csv") if d else None,
        coords=coords if coords else ("x", "y"),
        response=d.get("response", "z") if d else "z",
        seed=_int(d, "seed", 0) if hasattr(d, "name") else 0,
    )
    if len(data.coords) not in (1, 2):
        raise ConfigError("[data] coords: need one or two column names")

    sm = sec("design.smooth")
    nu_min = _float(sm, "nu_min", 0.5) if hasattr(sm, "name") else 0.5
    nu_max = _float(sm, "nu_max", 2.5) if hasattr(sm, "name") else 2.5
    try:
        bounds = SmoothnessBounds(nu_min, nu_max)
    except ValueError as err:
        raise ConfigError(f"[design.smooth] {err}") from err

    t = sec("taper")
    if hasattr(t, "name"):
        family = t.get("family", "none")
        delta = _float(t, "delta", 0.0)
        try:
            taper = TaperSpec(family, delta if family.lower() not in ("none", "")
                              else None)
        except ValueError as err:
            raise ConfigError(f"[taper] {err}") from err
    else:
        taper = TaperSpec(None)

    p = sec("penalties")
    if hasattr(p, "name"):
        try:
            penalties = PenaltyConfig(
                lambda_r=_float(p, "lambda_r", 0.0),
                lambda_mu=_float(p, "lambda_mu", 0.0),
                lambda_sigma=_float(p, "lambda_sigma", 0.0),
                kappa=_float(p, "kappa", 1e6),
                epsilon=_float(p, "epsilon", 1e-4),
            )
        except ConfigError:
            raise
        except Exception as err:
            raise ConfigError(f"[penalties] {err}") from err
        grid = TuneGrid(
            lambda_r=_axis(p, "lambda_r_grid", penalties.lambda_r),
            lambda_mu=_axis(p, "lambda_mu_grid", penalties.lambda_mu),
            lambda_sigma=_axis(p, "lambda_sigma_grid", penalties.lambda_sigma),
            fraction=_float(p, "tune_fraction", 0.30),
        )
    else:
        penalties = PenaltyConfig()
        grid = TuneGrid(lambda_r=(0.0,), lambda_mu=(0.0,), lambda_sigma=(0.0,))

    aniso = _names(sec("design.aniso")) if parser.has_section("design.aniso") else None
    tilt = _names(sec("design.tilt")) if parser.has_section("design.tilt") else None
    try:
        design = ModelDesign(
            mean=_names(sec("design.mean")),
            std_dev=_names(sec("design.std_dev")),
            scale=_names(sec("design.scale")),
            aniso=aniso,
            tilt=tilt,
            smooth=_names(sec("design.smooth")),
            bounds=bounds,
            taper=taper,
            penalties=penalties,
            nugget=_bool(d, "nugget", False) if hasattr(d, "name") else False,
            reparameterize=(_bool(d, "reparameterize", False)
                            if hasattr(d, "name") else False),
            sqrt8nu=_bool(d, "sqrt8nu", True) if hasattr(d, "name") else True,
            seed=data.seed,
        )
    except ConfigError:
        raise
    except Exception as err:
        raise ConfigError(str(err)) from err

    o = sec("optimizer")
    if hasattr(o, "name"):
        two_stage = o.get("two_stage", "auto").strip().lower()
        if two_stage not in ("auto", "true", "false"):
            raise ConfigError("[optimizer] two_stage must be auto, true, or false")
        optimizer = OptimizerConfig(
            max_iterations=_int(o, "max_iterations", 200),
            gtol=_float(o, "gtol", 1e-5),
            ftol=_float(o, "ftol", 1e-9),
            two_stage=two_stage,
        )
    else:
        optimizer = OptimizerConfig()

    try:
        grid_validated = TuneGrid(grid.lambda_r, grid.lambda_mu,
                                  grid.lambda_sigma, grid.fraction)
    except ValueError as err:
        raise ConfigError(f"[penalties] {err}") from err
    return RunConfig(data=data, design=design, optimizer=optimizer,
                     grid=grid_validated)


def load_truth(path: str) -> dict:
    """The [truth] section as {"component.name": value}; empty when absent.

    Keys name parameters of the configured design, e.g. ``mean.x1 = 2.0`` or
    ``scale = -1.5`` (a bare component name addresses its intercept), plus
    ``nugget`` for the log nugget. Used by the simulate subcommand.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    # keys are parameter names and must keep their case ("(intercept)" etc.)
    parser.optionxform = str
    try:
        read = parser.read(path)
    except configparser.Error as err:
        raise ConfigError(f"cannot parse config {path}: {err}") from err
    if not read:
        raise ConfigError(f"config file not found: {path}")
    if not parser.has_section("truth"):
        return {}
    out = {}
    for key, raw in parser["truth"].items():
        try:
            out[key] = float(raw)
        except ValueError:
            raise ConfigError(
                f"[truth] {key}: not a number ({raw!r})") from None
    return out


def design_to_sections(design: ModelDesign) -> dict:
    """Plain-dict image of a design (used by the parameter file writer)."""
    return {
        "mean": list(design.mean),
        "std_dev": list(design.std_dev),
        "scale": list(design.scale),
        "aniso": None if design.aniso is None else list(design.aniso),
        "tilt": None if design.tilt is None else list(design.tilt),
        "smooth": list(design.smooth),
        "nu_min": design.bounds.nu_min,
        "nu_max": design.bounds.nu_max,
        "taper_family": design.taper.family,
        "taper_delta": design.taper.delta,
        "lambda_r": design.penalties.lambda_r,
        "lambda_mu": design.penalties.lambda_mu,
        "lambda_sigma": design.penalties.lambda_sigma,
        "kappa": design.penalties.kappa,
        "epsilon": design.penalties.epsilon,
        "nugget": design.nugget,
        "reparameterize": design.reparameterize,
        "sqrt8nu": design.sqrt8nu,
        "seed": design.seed,
    }


def design_from_sections(sections: dict) -> ModelDesign:
    """Rebuild a ModelDesign from its design_to_sections image."""
    try:
        bounds = SmoothnessBounds(float(sections["nu_min"]),
                                  float(sections["nu_max"]))
        family = sections.get("taper_family")
        delta = sections.get("taper_delta")
        taper = TaperSpec(family, None if delta is None else float(delta))
        penalties = PenaltyConfig(
            lambda_r=float(sections.get("lambda_r", 0.0)),
            lambda_mu=float(sections.get("lambda_mu", 0.0)),
            lambda_sigma=float(sections.get("lambda_sigma", 0.0)),
            kappa=float(sections.get("kappa", 1e6)),
            epsilon=float(sections.get("epsilon", 1e-4)),
        )
        aniso = sections.get("aniso")
        tilt = sections.get("tilt")
        return ModelDesign(
            mean=tuple(sections.get("mean", ())),
            std_dev=tuple(sections.get("std_dev", ())),
            scale=tuple(sections.get("scale", ())),
            aniso=None if aniso is None else tuple(aniso),
            tilt=None if tilt is None else tuple(tilt),
            smooth=tuple(sections.get("smooth", ())),
            bounds=bounds,
            taper=taper,
            penalties=penalties,
            nugget=bool(sections.get("nugget", False)),
            reparameterize=bool(sections.get("reparameterize", False)),
            sqrt8nu=bool(sections.get("sqrt8nu", True)),
            seed=int(sections.get("seed", 0)),
        )
    except ConfigError:
        raise
    except KeyError as err:
        raise ConfigError(f"design description is missing key {err}") from None
    except Exception as err:
        raise ConfigError(f"bad design description: {err}") from None
