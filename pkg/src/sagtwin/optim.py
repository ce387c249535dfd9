"""Levenberg-Marquardt for small dense least-squares problems.

Works on the normal equations, which is cheap when the parameter count is
small compared with the number of residuals (the case for both the
regulatory model and the NARX network).
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg


@dataclass
class LMResult:
    x: np.ndarray
    fun: np.ndarray
    cost: float  # 0.5 * sum(fun**2)
    nit: int
    status: int  # >0 converged, 0 iteration limit, <0 failure
    message: str


def levenberg_marquardt(fun, jac, x0, *, max_iter=200, ftol=1e-12, xtol=1e-12, gtol=1e-12,
                        damping=1e-3, max_damping=1e12):
    """Minimise ``0.5 * ||fun(x)||^2`` with Marquardt-scaled damping.

    Returns
    -------
    LMResult
        ``status`` is 1 for the relative cost test, 2 for the step test,
        3 for the gradient test, 4 when damping saturates (no descent step
        found), 0 at the iteration limit and -1 for a non-finite start.
    """
    x = np.array(x0, dtype=float)
    r = fun(x)
    cost = 0.5 * float(r @ r)
    if not np.isfinite(cost):
        return LMResult(x, r, cost, 0, -1, "non-finite residuals at the start")
    lam = damping
    for it in range(1, max_iter + 1):
        J = jac(x)
        g = J.T @ r
        if np.max(np.abs(g)) <= gtol:
            return LMResult(x, r, cost, it, 3, "gradient below tolerance")
        H = J.T @ J
        d = np.maximum(np.diag(H), 1e-12 * max(1.0, np.max(np.diag(H))))
        while True:
            try:
                with warnings.catch_warnings():
                    # over-parametrised models give near-singular H by design
                    warnings.simplefilter("ignore", linalg.LinAlgWarning)
                    step = -linalg.solve(H + lam * np.diag(d), g, assume_a="pos")
            except (linalg.LinAlgError, ValueError):
                step = None
            if step is not None and np.all(np.isfinite(step)):
                x_new = x + step
                r_new = fun(x_new)
                with np.errstate(over="ignore", invalid="ignore"):
                    cost_new = 0.5 * float(r_new @ r_new)
                if np.isfinite(cost_new) and cost_new < cost:
                    break
            lam *= 4.0
            if lam > max_damping:
                return LMResult(x, r, cost, it, 4, "no descent step found")
        reduction = cost - cost_new
        x, r, cost = x_new, r_new, cost_new
        lam = max(lam / 3.0, 1e-15)
        if reduction <= ftol * cost_new:
            return LMResult(x, r, cost, it, 1, "relative cost reduction below tolerance")
        if np.linalg.norm(step) <= xtol * (np.linalg.norm(x) + xtol):
            return LMResult(x, r, cost, it, 2, "step below tolerance")
    return LMResult(x, r, cost, max_iter, 0, "iteration limit reached")
