"""Regenerate the packaged stationary-reference fixtures.

Writes synthetic200.csv (200 sites, intercept-only stationary Matern field,
nu = 1, no nugget) and golden_stationary.json (the reference maximum-likelihood
fit of that data plus kriging predictions at five fixed sites).

Everything here is coded directly against numpy/scipy so the fixtures are an
independent cross-check of the library: the correlation is the nu = 1 Matern
evaluated at sqrt(8) h / gamma, the mean and variance are profiled out in
closed form, and the remaining one-dimensional likelihood in log gamma is
maximized by bounded scalar search. Run from the repository root:

    python3 tests/data/gen_golden.py
"""

import json
import math
import os

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import kv

SEED = 113
N = 200
BETA0 = 0.7
SIGMA2 = 1.5
GAMMA = 0.4
NU = 1.0

PRED_SITES = np.array([
    [0.50, 0.50],
    [0.05, 0.95],
    [0.90, 0.10],
    [0.30, 0.70],
    [0.77, 0.33],
])


def matern_nu1(h, gamma):
    """nu = 1 Matern correlation with argument sqrt(8) h / gamma."""
    t = np.sqrt(8.0) * np.asarray(h, dtype=float) / gamma
    out = np.ones_like(t)
    pos = t > 0
    out[pos] = t[pos] * kv(1.0, t[pos])
    return out


def pairwise_dist(a, b):
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))


def profiled_negloglik(log_gamma, h, z):
    """-2/n-scaled profile likelihood in gamma; beta and sigma2 closed form."""
    n = z.size
    R = matern_nu1(h, math.exp(log_gamma))
    try:
        L = np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        return 1e12
    one = np.ones(n)
    w1 = np.linalg.solve(L, one)
    wz = np.linalg.solve(L, z)
    beta = float(w1 @ wz) / float(w1 @ w1)
    r = wz - beta * w1
    s2 = float(r @ r) / n
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    ll = -0.5 * n * math.log(2.0 * math.pi) - 0.5 * n * math.log(s2) \
        - 0.5 * logdet - 0.5 * n
    return -ll


def reference_fit(loc, z):
    h = pairwise_dist(loc, loc)
    res = minimize_scalar(profiled_negloglik, bounds=(math.log(0.02),
                                                      math.log(5.0)),
                          args=(h, z), method="bounded",
                          options={"xatol": 1e-10})
    gamma = math.exp(res.x)
    n = z.size
    R = matern_nu1(h, gamma)
    L = np.linalg.cholesky(R)
    one = np.ones(n)
    w1 = np.linalg.solve(L, one)
    wz = np.linalg.solve(L, z)
    beta = float(w1 @ wz) / float(w1 @ w1)
    r = wz - beta * w1
    s2 = float(r @ r) / n
    return {"beta0": beta, "sigma2": s2, "gamma": gamma, "nu": NU,
            "loglik": -res.fun,
            "microergodic": s2 / gamma ** (2.0 * NU)}


def reference_krige(loc, z, fit, new_loc):
    h = pairwise_dist(loc, loc)
    C = fit["sigma2"] * matern_nu1(h, fit["gamma"])
    c0 = fit["sigma2"] * matern_nu1(pairwise_dist(new_loc, loc), fit["gamma"])
    L = np.linalg.cholesky(C)
    resid = z - fit["beta0"]
    w = np.linalg.solve(L, resid)
    V = np.linalg.solve(L, c0.T)
    mean = fit["beta0"] + V.T @ w
    var = fit["sigma2"] - (V ** 2).sum(axis=0)
    return mean, np.sqrt(np.maximum(var, 0.0))


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    rng = np.random.default_rng(SEED)
    loc = rng.uniform(0.0, 1.0, size=(N, 2))
    h = pairwise_dist(loc, loc)
    C = SIGMA2 * matern_nu1(h, GAMMA)
    L = np.linalg.cholesky(C)
    z = BETA0 + L @ rng.standard_normal(N)

    csv_path = os.path.join(here, "synthetic200.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("x,y,z\n")
        for i in range(N):
            fh.write("%.17g,%.17g,%.17g\n" % (loc[i, 0], loc[i, 1], z[i]))

    fit = reference_fit(loc, z)
    mean, sd = reference_krige(loc, z, fit, PRED_SITES)
    golden = {
        "seed": SEED,
        "truth": {"beta0": BETA0, "sigma2": SIGMA2, "gamma": GAMMA, "nu": NU},
        "fit": fit,
        "pred_sites": PRED_SITES.tolist(),
        "pred_mean": mean.tolist(),
        "pred_sd": sd.tolist(),
    }
    json_path = os.path.join(here, "golden_stationary.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(golden, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print("wrote", csv_path)
    print("wrote", json_path)
    print("fit:", fit)


if __name__ == "__main__":
    main()
