"""Levenberg-Marquardt with Marquardt diagonal scaling and box projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LMResult:
    x: np.ndarray
    residuals: np.ndarray
    jac: np.ndarray
    cost: float
    n_iter: int
    converged: bool
    message: str


def levenberg_marquardt(fun, jac, x0, lower=None, upper=None, max_iter=200, xtol=1e-10,
                        ftol=1.49e-8, gtol=1e-14):
    """Minimize ``sum(fun(x)**2)``.

    ``fun`` returns the (weighted) residual vector, ``jac`` its Jacobian.
    Steps that leave ``[lower, upper]`` are projected back onto the box.
    Convergence when the relative step falls below ``xtol``, the relative
    cost decrease below ``ftol``, or the scaled gradient below ``gtol``.
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
    x = np.clip(x, lower, upper)

    r = fun(x)
    cost = float(r @ r)
    J = jac(x)
    lam = 1e-3
    if not np.isfinite(cost):
        return LMResult(x, r, J, cost, 0, False, "non-finite residuals at the start point")

    for it in range(1, max_iter + 1):
        if cost == 0.0:
            return LMResult(x, r, J, cost, it - 1, True, "zero residual")
        g = J.T @ r
        A = J.T @ J
        d = np.diag(A).copy()
        dmax = d.max() if d.size else 0.0
        d = np.maximum(d, 1e-12 * dmax if dmax > 0 else 1.0)
        # Projected, scaled gradient: components pinned against an active bound
        # do not count, and the test is invariant to parameter units.
        gp = np.where(((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0)), 0.0, g)
        if np.max(np.abs(gp) / np.sqrt(d)) <= gtol * np.sqrt(cost):
            return LMResult(x, r, J, cost, it - 1, True, "gradient tolerance")

        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(A + lam * np.diag(d), -g, rcond=None)[0]
            x_new = np.clip(x + step, lower, upper)
            r_new = fun(x_new)
            cost_new = float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new < cost:
                break
            lam *= 10.0
            if lam > 1e16:
                return LMResult(x, r, J, cost, it, True, "no further decrease possible")

        dx = x_new - x
        rel_step = np.linalg.norm(dx) / (np.linalg.norm(x) + xtol)
        rel_drop = (cost - cost_new) / cost
        x, r, cost = x_new, r_new, cost_new
        J = jac(x)
        lam = max(lam / 10.0, 1e-15)
        if rel_step <= xtol:
            return LMResult(x, r, J, cost, it, True, "step tolerance")
        if rel_drop <= ftol:
            return LMResult(x, r, J, cost, it, True, "cost tolerance")

    return LMResult(x, r, J, cost, max_iter, False, "iteration limit reached")
