"""Spatial datasets: CSV ingestion, covariate standardization, subsetting.

Covariates are standardized to mean 0 and sample standard deviation 1 (n-1
denominator). A covariate named "log(col)" is derived as the natural log of
the raw column col before standardization, so a raw column and its log can
both serve as candidates. The per-column statistics and log flags form the
standardization record, which is stored at fit time and re-applied verbatim to
prediction inputs; prediction never re-estimates statistics.

Coordinates and the response are never rescaled.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import DataError

__all__ = ["ColumnStats", "SpatialDataset", "parse_covariate", "standardize",
           "load_csv"]

_LOG_RE = re.compile(r"^log\((.+)\)$")


@dataclass(frozen=True)
class ColumnStats:
    """Standardization record entry for one covariate column."""

    mean: float
    sd: float
    log: bool
    source: str


def parse_covariate(name: str):
    """Split a covariate name into (source raw column, log flag)."""
    m = _LOG_RE.match(name.strip())
    if m:
        return m.group(1).strip(), True
    return name.strip(), False


def _raw_column(frame: pd.DataFrame, name: str, path: str) -> np.ndarray:
    if name not in frame.columns:
        raise DataError(f"column {name!r} missing from {path}")
    col = pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(col))
    if bad.size:
        raise DataError(
            f"column {name!r} has a missing/non-numeric value at row {bad[0]}"
        )
    return col


def standardize(raw: np.ndarray, name: str, log: bool,
                stats: Optional[ColumnStats] = None, source: str = "") -> tuple:
    """Standardize one column; with stats given, apply the stored record."""
    v = np.asarray(raw, dtype=float)
    if log:
        nonpos = np.flatnonzero(v <= 0)
        if nonpos.size:
            raise DataError(
                f"covariate {name!r}: log transform needs positive values, "
                f"found {v[nonpos[0]]} at row {nonpos[0]}"
            )
        v = np.log(v)
    if stats is None:
        mean = float(np.mean(v))
        sd = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
        if not np.isfinite(sd) or sd <= 0:
            raise DataError(f"covariate {name!r} has zero variance")
        stats = ColumnStats(mean=mean, sd=sd, log=log, source=source or name)
    return (v - stats.mean) / stats.sd, stats


class SpatialDataset:
    """Locations, optional response, and standardized covariates.

    covariates maps covariate name to its standardized column; record maps the
    same names to their ColumnStats.
    """

    def __init__(self, locations: np.ndarray,
                 response: Optional[np.ndarray],
                 covariates: Dict[str, np.ndarray],
                 record: Optional[Dict[str, ColumnStats]] = None,
                 check_distinct: bool = True):
        locations = np.asarray(locations, dtype=float)
        if locations.ndim == 1:
            locations = locations[:, None]
        if locations.ndim != 2 or locations.shape[1] not in (1, 2):
            raise DataError("locations must be an (n, d) array with d in {1, 2}")
        if not np.all(np.isfinite(locations)):
            raise DataError("locations contain non-finite values")
        n = locations.shape[0]
        if check_distinct and n > 1:
            uniq = np.unique(locations, axis=0)
            if uniq.shape[0] != n:
                raise DataError("sampling locations must be mutually distinct")
        if response is not None:
            response = np.asarray(response, dtype=float).ravel()
            if response.shape[0] != n:
                raise DataError("response length does not match locations")
            if not np.all(np.isfinite(response)):
                raise DataError("response contains non-finite values")
        for name, col in covariates.items():
            if len(col) != n:
                raise DataError(f"covariate {name!r} length mismatch")
        self.locations = locations
        self.response = response
        self.covariates = {k: np.asarray(v, dtype=float) for k, v in covariates.items()}
        self.record = {} if record is None else dict(record)

    @property
    def n(self) -> int:
        return self.locations.shape[0]

    @property
    def d(self) -> int:
        return self.locations.shape[1]

    def covariate(self, name: str) -> np.ndarray:
        if name not in self.covariates:
            raise DataError(f"covariate {name!r} not present in the dataset")
        return self.covariates[name]

    def design_matrix(self, names: Sequence[str]) -> np.ndarray:
        """Intercept column followed by the named covariates."""
        cols = [np.ones(self.n)]
        cols.extend(self.covariate(name) for name in names)
        return np.column_stack(cols)

    def subset(self, idx) -> "SpatialDataset":
        idx = np.asarray(idx)
        return SpatialDataset(
            self.locations[idx],
            None if self.response is None else self.response[idx],
            {k: v[idx] for k, v in self.covariates.items()},
            self.record,
            check_distinct=False,
        )


def load_csv(path: str, coord_cols: Sequence[str],
             covariate_names: Sequence[str],
             response_col: Optional[str] = None,
             record: Optional[Dict[str, ColumnStats]] = None) -> SpatialDataset:
    """Read a header CSV into a SpatialDataset.

    covariate_names may include derived "log(col)" entries. When record is
    given (prediction time), its statistics are applied instead of being
    re-estimated, and every requested covariate must be present in it.
    """
    try:
        frame = pd.read_csv(path)
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from None
    except Exception as err:
        raise DataError(f"cannot parse {path} as CSV: {err}") from None
    if frame.shape[0] == 0:
        raise DataError(f"{path} contains no rows")
    loc = np.column_stack([_raw_column(frame, c, path) for c in coord_cols])
    response = None
    if response_col is not None:
        response = _raw_column(frame, response_col, path)
    covs: Dict[str, np.ndarray] = {}
    stats: Dict[str, ColumnStats] = {}
    for name in covariate_names:
        source, log = parse_covariate(name)
        raw = _raw_column(frame, source, path)
        prior = None
        if record is not None:
            if name not in record:
                raise DataError(f"covariate {name!r} missing from the stored "
                                f"standardization record")
            prior = record[name]
        covs[name], stats[name] = standardize(raw, name, log, stats=prior,
                                              source=source)
    return SpatialDataset(loc, response, covs, stats)
