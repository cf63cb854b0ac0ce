"""Bounded quasi-Newton maximization with finite-difference derivatives.

The inner minimizer is scipy's L-BFGS-B (limited memory 10, line-search cap
30). Everything around it is ours: maximization orientation, central
finite-difference gradients with bound-aware one-sided fallbacks, a
best-so-far guard so the returned point never degrades the initial objective,
and finite-difference Hessians for standard errors.

Objectives map a flat value array to a float and may return -inf for
infeasible points; those are capped to a large finite penalty so the line
search stays well defined.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import NumericalError

__all__ = ["OptimProblem", "OptimResult", "maximize", "fd_gradient",
           "hessian_fd", "standard_errors"]


def _step_sizes(x: np.ndarray, h_fd) -> np.ndarray:
    if h_fd is None:
        return np.maximum(1e-6, 1e-7 * np.abs(x))
    h = np.asarray(h_fd, dtype=float)
    if h.ndim == 0:
        h = np.full(x.shape, float(h))
    return h


def fd_gradient(objective: Callable[[np.ndarray], float], point,
                h_fd=None, lower=None, upper=None, return_flags: bool = False):
    """Central-difference gradient with one-sided fallback at bounds or when a
    neighbor evaluation is non-finite. Flags per coordinate: 'central',
    'forward', 'backward', or 'failed' (gradient coordinate set to 0)."""
    x = np.asarray(point, dtype=float)
    h = _step_sizes(x, h_fd)
    lo = np.full(x.shape, -np.inf) if lower is None else np.asarray(lower, float)
    hi = np.full(x.shape, np.inf) if upper is None else np.asarray(upper, float)
    grad = np.zeros_like(x)
    flags = []
    f0 = None
    for i in range(x.size):
        hp = h[i] if x[i] + h[i] <= hi[i] else 0.0
        hm = h[i] if x[i] - h[i] >= lo[i] else 0.0
        fp = fm = np.nan
        if hp:
            xp = x.copy(); xp[i] += hp
            fp = objective(xp)
        if hm:
            xm = x.copy(); xm[i] -= hm
            fm = objective(xm)
        if hp and hm and np.isfinite(fp) and np.isfinite(fm):
            grad[i] = (fp - fm) / (hp + hm)
            flags.append("central")
            continue
        if f0 is None:
            f0 = objective(x)
        if hp and np.isfinite(fp) and np.isfinite(f0):
            grad[i] = (fp - f0) / hp
            flags.append("forward")
        elif hm and np.isfinite(fm) and np.isfinite(f0):
            grad[i] = (f0 - fm) / hm
            flags.append("backward")
        else:
            grad[i] = 0.0
            flags.append("failed")
    if return_flags:
        return grad, flags
    return grad


@dataclass
class OptimProblem:
    """A bounded maximization problem over a flat value array."""

    objective: Callable[[np.ndarray], float]
    x0: np.ndarray
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    max_iterations: int = 200
    h_fd: Optional[float] = None
    gtol: float = 1e-5
    ftol: float = 1e-9

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        p = self.x0.size
        self.lower = (np.full(p, -np.inf) if self.lower is None
                      else np.asarray(self.lower, float).ravel())
        self.upper = (np.full(p, np.inf) if self.upper is None
                      else np.asarray(self.upper, float).ravel())
        if np.any(self.lower > self.x0) or np.any(self.x0 > self.upper):
            raise ValueError("initial point violates bounds")
        if self.gtol <= 0 or self.ftol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    iterations: int
    evaluations: int
    converged: bool
    message: str
    hess_inv_diag: Optional[np.ndarray] = None
    wall_time: float = 0.0


def maximize(problem: OptimProblem) -> OptimResult:
    """Maximize the problem objective; deterministic given identical inputs.

    The accepted-objective sequence is monotone by construction: the returned
    point is the best evaluated one, never worse than the initial point."""
    t0 = time.perf_counter()
    obj = problem.objective
    f_init = obj(problem.x0)
    if not np.isfinite(f_init):
        raise NumericalError("objective is not finite at the initial point")

    # Hopeless territory (overflowed likelihoods, -inf) is flattened to a
    # plateau a few orders worse than the start. A cap near overflow would
    # crush the line search's interpolated step to zero and fake convergence;
    # a moderate one backtracks it into the feasible region in a few trials.
    floor = -(1e3 * (abs(f_init) + 1.0) + 1e6)
    state = {"best_f": f_init, "best_x": problem.x0.copy(), "evals": 0}

    def raw(x):
        state["evals"] += 1
        f = obj(x)
        if not np.isfinite(f) or f <= floor:
            return -np.inf
        if f > state["best_f"]:
            state["best_f"] = f
            state["best_x"] = x.copy()
        return f

    def fun(x):
        f = raw(x)
        return -floor if f == -np.inf else -f

    def grad_probe(x):
        f = raw(x)
        return np.nan if f == -np.inf else f  # nan -> one-sided fallback

    def jac(x):
        if raw(x) == -np.inf:
            return np.zeros_like(x)  # flat plateau; the search must backtrack
        g = fd_gradient(grad_probe, x, problem.h_fd, problem.lower,
                        problem.upper)
        return -g

    res = minimize(
        fun, problem.x0, jac=jac, method="L-BFGS-B",
        bounds=list(zip(problem.lower, problem.upper)),
        options={
            "maxiter": problem.max_iterations,
            "maxcor": 10,
            "maxls": 30,
            "ftol": problem.ftol,
            "gtol": problem.gtol,
        },
    )
    x_best, f_best = state["best_x"], state["best_f"]
    converged = bool(res.success)
    hd = None
    if hasattr(res, "hess_inv") and res.hess_inv is not None:
        try:
            hd = np.asarray(res.hess_inv.todense()).diagonal().copy()
        except Exception:
            hd = None
    return OptimResult(
        x=x_best, fun=f_best, iterations=int(res.nit),
        evaluations=state["evals"], converged=converged,
        message=str(res.message), hess_inv_diag=hd,
        wall_time=time.perf_counter() - t0,
    )


def hessian_fd(objective: Callable[[np.ndarray], float], point,
               h=None, lower=None, upper=None) -> np.ndarray:
    """Symmetric central second-difference Hessian. Steps shrink to stay
    inside bounds; a coordinate with no room on one side uses a shifted
    one-sided stencil for its diagonal entry."""
    x = np.asarray(point, dtype=float)
    p = x.size
    hs = (np.maximum(1e-4, 1e-4 * np.abs(x)) if h is None
          else np.broadcast_to(np.asarray(h, float), x.shape).copy())
    lo = np.full(p, -np.inf) if lower is None else np.asarray(lower, float)
    hi = np.full(p, np.inf) if upper is None else np.asarray(upper, float)
    for i in range(p):
        room = min(hi[i] - x[i], x[i] - lo[i])
        if room > 0:
            hs[i] = min(hs[i], max(room, 1e-8))

    def f_at(shift_idx: Sequence[int], shift_amt: Sequence[float]) -> float:
        xx = x.copy()
        for k, a in zip(shift_idx, shift_amt):
            xx[k] += a
        return objective(xx)

    f0 = objective(x)
    H = np.zeros((p, p))
    for i in range(p):
        hi_ok = x[i] + hs[i] <= hi[i]
        lo_ok = x[i] - hs[i] >= lo[i]
        if hi_ok and lo_ok:
            H[i, i] = (f_at([i], [hs[i]]) - 2.0 * f0 + f_at([i], [-hs[i]])) / hs[i] ** 2
        else:
            s = hs[i] if hi_ok else -hs[i]
            H[i, i] = (f_at([i], [2 * s]) - 2.0 * f_at([i], [s]) + f0) / hs[i] ** 2
        for j in range(i + 1, p):
            sij = (f_at([i, j], [hs[i], hs[j]]) - f_at([i, j], [hs[i], -hs[j]])
                   - f_at([i, j], [-hs[i], hs[j]]) + f_at([i, j], [-hs[i], -hs[j]]))
            H[i, j] = H[j, i] = sij / (4.0 * hs[i] * hs[j])
    return 0.5 * (H + H.T)


def standard_errors(hessian: np.ndarray):
    """(se, message): se = sqrt(diag((-H)^-1)) when -H is positive definite,
    else (None, diagnostic). Never raises."""
    try:
        neg = -np.asarray(hessian, dtype=float)
        # positive definiteness check through Cholesky
        np.linalg.cholesky(neg)
        cov = np.linalg.inv(neg)
        d = np.diag(cov)
        if np.any(d <= 0) or not np.all(np.isfinite(d)):
            return None, "negative or non-finite variance estimates"
        return np.sqrt(d), "ok"
    except np.linalg.LinAlgError as err:
        return None, f"Hessian not negative definite ({err})"
