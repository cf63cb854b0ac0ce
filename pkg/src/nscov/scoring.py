"""Proper scoring rules for Gaussian predictive distributions and the
clustered-holdout report.

CRPS uses the standard positively-oriented closed form for a Gaussian
predictive (a loss: smaller is better, 0 at a point mass on the truth). The
log-score is the negative log predictive density. Holdout points are grouped
by k-means on their coordinates; the report carries per-cluster values, pooled
aggregates, and the between-cluster spread of the per-cluster values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.stats import norm

__all__ = ["crps_gaussian", "logscore_gaussian", "ks_statistic", "coverage",
           "cluster_holdout", "score_report", "ScoreReport"]

_Z975 = float(norm.ppf(0.975))  # 1.959964...
_SQRT_PI = float(np.sqrt(np.pi))


def _check_sigma(sigma) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    return sigma


def crps_gaussian(z, mu, sigma):
    """sigma * [u(2 Phi(u) - 1) + 2 phi(u) - 1/sqrt(pi)], u = (z-mu)/sigma."""
    sigma = _check_sigma(sigma)
    z = np.asarray(z, dtype=float)
    mu = np.asarray(mu, dtype=float)
    u = (z - mu) / sigma
    val = sigma * (u * (2.0 * norm.cdf(u) - 1.0) + 2.0 * norm.pdf(u)
                   - 1.0 / _SQRT_PI)
    return val if val.ndim else float(val)


def logscore_gaussian(z, mu, sigma):
    """Negative log Gaussian density: log sqrt(2 pi) + ((z-mu)/(sqrt2 sigma))^2
    + log sigma."""
    sigma = _check_sigma(sigma)
    z = np.asarray(z, dtype=float)
    mu = np.asarray(mu, dtype=float)
    u = (z - mu) / (np.sqrt(2.0) * sigma)
    val = np.log(np.sqrt(2.0 * np.pi)) + u * u + np.log(sigma)
    return val if val.ndim else float(val)


def ks_statistic(residuals) -> float:
    """Two-sided sup distance between the empirical CDF of the standardized
    residuals and the standard normal CDF."""
    r = np.sort(np.asarray(residuals, dtype=float).ravel())
    n = r.size
    if n == 0:
        raise ValueError("residual vector is empty")
    cdf = norm.cdf(r)
    grid = np.arange(1, n + 1) / n
    d_plus = np.max(grid - cdf)
    d_minus = np.max(cdf - (grid - 1.0 / n))
    return float(max(d_plus, d_minus))


def coverage(z, mu, sd, level: float = 0.95) -> float:
    """Fraction of observations inside the symmetric two-sided interval."""
    z = np.asarray(z, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sd = np.asarray(sd, dtype=float)
    q = float(norm.ppf(0.5 + level / 2.0))
    return float(np.mean(np.abs(z - mu) <= q * sd))


def cluster_holdout(locations, k: int = 100, seed: int = 0) -> np.ndarray:
    """k-means labels over holdout coordinates (Lloyd iterations, k-means++
    seeding, iteration cap 100, deterministic per seed)."""
    from sklearn.cluster import KMeans

    locations = np.asarray(locations, dtype=float)
    if locations.ndim == 1:
        locations = locations[:, None]
    n = locations.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds the number of holdout points {n}")
    km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=100,
                algorithm="lloyd", random_state=seed)
    return km.fit_predict(locations)


@dataclass
class ScoreReport:
    """Aggregate row plus per-cluster rows of the holdout metrics.

    aggregate values are pooled over all points; the standard errors are the
    sample standard deviations of the per-cluster values (absent with fewer
    than two clusters)."""

    rmspe: float
    crps_mean: float
    crps_q95: float
    logscore_mean: float
    ks: float
    cpi: float
    se: dict
    clusters: List[dict] = field(default_factory=list)
    k: int = 0
    seed: int = 0
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "aggregate": {
                "rmspe": self.rmspe, "crps_mean": self.crps_mean,
                "crps_q95": self.crps_q95,
                "logscore_mean": self.logscore_mean,
                "ks": self.ks, "cpi": self.cpi,
            },
            "between_cluster_se": self.se,
            "clusters": self.clusters,
            "kmeans": {"k": self.k, "seed": self.seed},
            "notes": self.notes,
        }

    def text_table(self) -> str:
        head = (f"{'':12s}{'RMSPE':>10s}{'CRPS':>10s}{'CRPSq95':>10s}"
                f"{'LogS':>10s}{'KS':>8s}{'CPI':>8s}")
        lines = [head]
        fmt = "{:12s}{:>10.4f}{:>10.4f}{:>10.4f}{:>10.4f}{:>8.4f}{:>8.4f}"
        lines.append(fmt.format("overall", self.rmspe, self.crps_mean,
                                self.crps_q95, self.logscore_mean, self.ks,
                                self.cpi))
        if self.se:
            lines.append(
                "{:12s}{:>10s}{:>10s}{:>10s}{:>10s}{:>8s}{:>8s}".format(
                    "(se)",
                    f"({self.se['rmspe']:.4f})",
                    f"({self.se['crps_mean']:.4f})",
                    "", f"({self.se['logscore_mean']:.4f})", "",
                    f"({self.se['cpi']:.4f})"))
        return "\n".join(lines)


def score_report(pred_mean, pred_sd, truth, clusters,
                 pred_sd_data_scale=None, k: int = 0,
                 seed: int = 0) -> ScoreReport:
    """Metrics per cluster and pooled. CRPS, log-score, RMSPE, and the KS
    statistic use the given predictive sd; interval coverage (CPI) uses
    pred_sd_data_scale when supplied (intervals for observations rather than
    the smooth process)."""
    mu = np.asarray(pred_mean, dtype=float)
    sd = _check_sigma(pred_sd)
    z = np.asarray(truth, dtype=float)
    labels = np.asarray(clusters)
    sd_cpi = sd if pred_sd_data_scale is None else _check_sigma(pred_sd_data_scale)
    if not (mu.shape == sd.shape == z.shape == labels.shape == sd_cpi.shape):
        raise ValueError("prediction, truth, and cluster lengths differ")

    err = z - mu
    crps_all = crps_gaussian(z, mu, sd)
    ls_all = logscore_gaussian(z, mu, sd)

    rows = []
    notes: List[str] = []
    if k > 0 and np.issubdtype(labels.dtype, np.integer):
        label_iter = range(k)
    else:
        label_iter = np.unique(labels)
    for lab in label_iter:
        idx = labels == lab
        m = int(idx.sum())
        if m == 0:
            notes.append(f"cluster {lab} is empty; skipped")
            continue
        rows.append({
            "cluster": int(lab) if np.issubdtype(labels.dtype, np.integer) else lab,
            "size": m,
            "rmspe": float(np.sqrt(np.mean(err[idx] ** 2))),
            "crps_mean": float(np.mean(crps_all[idx])),
            "crps_q95": float(np.quantile(crps_all[idx], 0.95)),
            "logscore_mean": float(np.mean(ls_all[idx])),
            "ks": ks_statistic(err[idx] / sd[idx]),
            "cpi": coverage(z[idx], mu[idx], sd_cpi[idx]),
        })
    se = {}
    if len(rows) >= 2:
        for key in ("rmspe", "crps_mean", "crps_q95", "logscore_mean", "ks",
                    "cpi"):
            se[key] = float(np.std([r[key] for r in rows], ddof=1))
    return ScoreReport(
        rmspe=float(np.sqrt(np.mean(err**2))),
        crps_mean=float(np.mean(crps_all)),
        crps_q95=float(np.quantile(crps_all, 0.95)),
        logscore_mean=float(np.mean(ls_all)),
        ks=ks_statistic(err / sd),
        cpi=coverage(z, mu, sd_cpi),
        se=se, clusters=rows, k=k, seed=seed, notes=notes,
    )
