"""Model design, penalty configuration, and the flat parameter vector.

A ModelDesign assigns covariates to the six model components:

    mean      response trend coefficients beta
    std_dev   log-variance coefficients alpha (sigma = exp(0.5 x'alpha))
    scale     main-scale coefficients theta_ms (rho = exp(x'theta_ms))
    aniso     anisotropy-ratio coefficients theta_ga (r = exp(x'theta_ga))
    tilt      tilt coefficients theta_tt (omega = pi * inv_logit(x'theta_tt))
    smooth    smoothness coefficients xi (bounded logistic)

Every enabled component carries an implicit intercept ahead of its covariate
slopes. aniso and tilt may be disabled entirely (None), which pins r = 1 and
omega = pi/2; they must be disabled when a taper is active because the tapered
model uses the scalar isotropic covariance.

All scalars live in one flat vector whose layout table maps each position to
(component, covariate name, intercept flag). An optional reparameterization
stores, for every covariate shared by std_dev and scale (the intercept always
is), the sum/difference pair (alpha + theta_ms, alpha - theta_ms) instead of
the raw pair; the two parameterizations are bijective and the decode map is
alpha = (a + t)/2, theta_ms = (a - t)/2. Decoding is applied before any
covariance evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .kernels import SmoothnessBounds, TaperSpec

__all__ = ["PenaltyConfig", "ModelDesign", "ParameterLayout", "ParameterVector",
           "INTERCEPT"]

INTERCEPT = "(intercept)"

# components whose coefficients enter the covariance (everything but the mean)
COVARIANCE_COMPONENTS = ("std_dev", "scale", "aniso", "tilt", "smooth")


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty strengths: lambda_r on the baseline scale-smoothness product,
    lambda_mu / lambda_sigma on mean / covariance covariate slopes, kappa the
    smooth-L1 sharpness, epsilon the active-set threshold."""

    lambda_r: float = 0.0
    lambda_mu: float = 0.0
    lambda_sigma: float = 0.0
    kappa: float = 1e6
    epsilon: float = 1e-4

    def __post_init__(self):
        for name in ("lambda_r", "lambda_mu", "lambda_sigma"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be nonnegative, got {v}")
        if not np.isfinite(self.kappa) or self.kappa < 1:
            raise ConfigError(f"kappa must be >= 1, got {self.kappa}")
        if not (0 < self.epsilon < 1):
            raise ConfigError(f"epsilon must be in (0,1), got {self.epsilon}")


@dataclass(frozen=True)
class ModelDesign:
    """Which covariate enters which component, plus model-level switches."""

    mean: Sequence[str] = ()
    std_dev: Sequence[str] = ()
    scale: Sequence[str] = ()
    aniso: Optional[Sequence[str]] = None
    tilt: Optional[Sequence[str]] = None
    smooth: Sequence[str] = ()
    bounds: SmoothnessBounds = field(default_factory=lambda: SmoothnessBounds(0.5, 2.5))
    taper: TaperSpec = field(default_factory=lambda: TaperSpec(None))
    penalties: PenaltyConfig = field(default_factory=PenaltyConfig)
    nugget: bool = False
    reparameterize: bool = False
    sqrt8nu: bool = True
    seed: int = 0

    def __post_init__(self):
        for comp in ("mean", "std_dev", "scale", "smooth"):
            object.__setattr__(self, comp, tuple(getattr(self, comp)))
        for comp in ("aniso", "tilt"):
            v = getattr(self, comp)
            object.__setattr__(self, comp, None if v is None else tuple(v))
        if self.taper.enabled and (self.aniso is not None or self.tilt is not None):
            raise ConfigError(
                "tapered models use the scalar isotropic covariance; disable "
                "the aniso and tilt components"
            )

    @property
    def isotropic(self) -> bool:
        """True when the kernel matrix is a scalar multiple of the identity."""
        return self.aniso is None and self.tilt is None

    def component_names(self, component: str) -> Optional[tuple]:
        v = getattr(self, component)
        return v

    def all_covariates(self) -> List[str]:
        seen: Dict[str, None] = {}
        for comp in ("mean",) + COVARIANCE_COMPONENTS:
            names = getattr(self, comp)
            if names:
                for name in names:
                    seen.setdefault(name, None)
        return list(seen)

    def validate_against(self, dataset):
        for name in self.all_covariates():
            if name not in dataset.covariates:
                raise ConfigError(f"design references covariate {name!r} "
                                  f"absent from the dataset")
        if dataset.d == 1 and not self.isotropic:
            raise ConfigError("1-d data supports only the isotropic model; "
                              "disable aniso and tilt")

    def with_penalties(self, penalties: PenaltyConfig) -> "ModelDesign":
        return replace(self, penalties=penalties)


class ParameterLayout:
    """Flat layout of all model scalars with component slices and masks."""

    def __init__(self, design: ModelDesign):
        self.design = design
        entries = []  # (component, name, is_intercept)
        slices: Dict[str, slice] = {}

        def add(component, names):
            start = len(entries)
            entries.append((component, INTERCEPT, True))
            for nm in names:
                entries.append((component, nm, False))
            slices[component] = slice(start, len(entries))

        add("mean", design.mean)
        add("std_dev", design.std_dev)
        add("scale", design.scale)
        if design.aniso is not None:
            add("aniso", design.aniso)
        if design.tilt is not None:
            add("tilt", design.tilt)
        add("smooth", design.smooth)
        if design.nugget:
            start = len(entries)
            entries.append(("nugget", INTERCEPT, True))
            slices["nugget"] = slice(start, len(entries))
        self.entries = entries
        self.slices = slices
        self.size = len(entries)
        comp = np.array([e[0] for e in entries])
        intercept = np.array([e[2] for e in entries])
        self.is_intercept = intercept
        self.always_active = intercept.copy()  # intercepts and the nugget
        self.mean_slopes = (comp == "mean") & ~intercept
        self.cov_slopes = np.isin(comp, COVARIANCE_COMPONENTS) & ~intercept
        # shared std_dev/scale covariates subject to the reparameterization
        self.shared_pairs = []
        if design.reparameterize:
            sd_names = {e[1]: i for i, e in enumerate(entries) if e[0] == "std_dev"}
            sc_names = {e[1]: i for i, e in enumerate(entries) if e[0] == "scale"}
            for name, i_sd in sd_names.items():
                if name in sc_names:
                    self.shared_pairs.append((i_sd, sc_names[name]))

    def index_of(self, component: str, name: str = INTERCEPT) -> int:
        for i, (c, nm, _) in enumerate(self.entries):
            if c == component and nm == name:
                return i
        raise KeyError(f"no parameter for ({component}, {name})")

    def default_bounds(self):
        """(lower, upper) arrays: slopes and intercepts in [-20, 20], nugget
        log-variance in [-30, 20]."""
        lower = np.full(self.size, -20.0)
        upper = np.full(self.size, 20.0)
        if "nugget" in self.slices:
            lower[self.slices["nugget"]] = -30.0
        return lower, upper

    def describe(self) -> List[dict]:
        return [
            {"component": c, "covariate": nm, "intercept": flag}
            for c, nm, flag in self.entries
        ]


class ParameterVector:
    """Flat parameter values bound to a layout.

    values are the stored (optimization) coordinates; decoded() undoes the
    shared-covariate reparameterization and splits by component.
    """

    def __init__(self, layout: ParameterLayout, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (layout.size,):
            raise ValueError(
                f"expected {layout.size} parameter values, got {values.shape}"
            )
        self.layout = layout
        self.values = values

    @classmethod
    def zeros(cls, layout: ParameterLayout) -> "ParameterVector":
        return cls(layout, np.zeros(layout.size))

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.layout, self.values.copy())

    def with_values(self, values) -> "ParameterVector":
        return ParameterVector(self.layout, values)

    def component(self, name: str) -> np.ndarray:
        sl = self.layout.slices.get(name)
        if sl is None:
            return np.zeros(0)
        return self.values[sl]

    def decoded(self) -> Dict[str, np.ndarray]:
        """Per-component coefficient vectors in the natural parameterization."""
        vals = self.values.copy()
        for i_sd, i_sc in self.layout.shared_pairs:
            a_d, t_d = vals[i_sd], vals[i_sc]
            vals[i_sd] = 0.5 * (a_d + t_d)
            vals[i_sc] = 0.5 * (a_d - t_d)
        out = {}
        for comp in ("mean", "std_dev", "scale", "aniso", "tilt", "smooth"):
            sl = self.layout.slices.get(comp)
            out[comp] = vals[sl] if sl is not None else None
        if "nugget" in self.layout.slices:
            out["nugget"] = float(np.exp(vals[self.layout.slices["nugget"]][0]))
        else:
            out["nugget"] = 0.0
        return out

    def encode_from(self, decoded_values: np.ndarray) -> np.ndarray:
        """Inverse of the decode map on a full natural-coordinate vector."""
        vals = np.asarray(decoded_values, dtype=float).copy()
        for i_sd, i_sc in self.layout.shared_pairs:
            a, t = vals[i_sd], vals[i_sc]
            vals[i_sd] = a + t
            vals[i_sc] = a - t
        return vals

    def to_json_dict(self) -> dict:
        return {
            "values": [float(v) for v in self.values],
            "layout": self.layout.describe(),
        }


def layout_for(design: ModelDesign) -> ParameterLayout:
    return ParameterLayout(design)
