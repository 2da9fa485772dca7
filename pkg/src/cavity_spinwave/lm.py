"""Bounded Levenberg-Marquardt with finite-difference Jacobians.

Marquardt's diagonal scaling with Nielsen's damping update.  Steps are
projected onto the box bounds; a step is accepted only if it lowers the
objective, so the recorded cost history is non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS = np.finfo(float).eps


class RankDeficientFit(ValueError):
    """The Jacobian does not constrain every free parameter."""


@dataclass
class LMResult:
    x: np.ndarray
    cost: float  # 0.5 * sum(residual^2)
    residuals: np.ndarray
    jac: np.ndarray
    iterations: int
    nfev: int
    converged: bool
    message: str
    cost_history: list = field(default_factory=list)


def fd_jacobian(fun, x, r0, lower, upper, rel_step, executor=None):
    n = x.size
    steps = np.empty(n)
    probes = []
    for j in range(n):
        h = rel_step * max(abs(x[j]), 1.0)
        if x[j] + h > upper[j]:
            h = -h
        xp = x.copy()
        xp[j] += h
        steps[j] = xp[j] - x[j]
        probes.append(xp)
    cols = list(executor.map(fun, probes)) if executor is not None else [fun(p) for p in probes]
    return np.column_stack([(c - r0) / s for c, s in zip(cols, steps)])


def levenberg_marquardt(fun, x0, lower=None, upper=None, rel_step=None, max_iter=200,
                        ftol=1e-10, xtol=1e-10, gtol=1e-12, executor=None) -> LMResult:
    """Minimize 0.5 * ||fun(x)||^2 subject to lower <= x <= upper."""
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
    if np.any(x < lower) or np.any(x > upper):
        raise ValueError("initial guess outside bounds")
    rel_step = np.sqrt(EPS) if rel_step is None else rel_step

    r = np.asarray(fun(x), dtype=float)
    nfev = 1
    cost = 0.5 * r @ r
    history = [cost]
    J = fd_jacobian(fun, x, r, lower, upper, rel_step, executor)
    nfev += n
    if cost == 0.0:
        return LMResult(x, cost, r, J, 0, nfev, True, "zero residual", history)

    diag = np.maximum(np.sum(J * J, axis=0), EPS)
    mu = 1e-3
    nu = 2.0
    it = 0
    message = "iteration limit reached"
    converged = False
    while it < max_iter:
        grad = J.T @ r
        if np.max(np.abs(grad)) <= gtol * max(cost, EPS):
            converged, message = True, "gradient below tolerance"
            break
        A = J.T @ J
        diag = np.maximum(diag, np.diag(A))
        try:
            step = np.linalg.solve(A + mu * np.diag(diag), -grad)
        except np.linalg.LinAlgError:
            mu *= nu
            nu *= 2.0
            it += 1
            continue
        x_new = np.clip(x + step, lower, upper)
        step = x_new - x
        if np.linalg.norm(step) <= xtol * (np.linalg.norm(x) + xtol):
            converged, message = True, "step below tolerance"
            break
        r_new = np.asarray(fun(x_new), dtype=float)
        nfev += 1
        cost_new = 0.5 * r_new @ r_new
        predicted = -(grad @ step) - 0.5 * step @ (A @ step)
        rho = (cost - cost_new) / predicted if predicted > 0 else -1.0
        it += 1
        if cost_new < cost and rho > 0:
            rel_drop = (cost - cost_new) / cost
            x, r, cost = x_new, r_new, cost_new
            history.append(cost)
            J = fd_jacobian(fun, x, r, lower, upper, rel_step, executor)
            nfev += n
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            if cost == 0.0 or rel_drop <= ftol:
                converged, message = True, "objective change below tolerance"
                break
        else:
            mu *= nu
            nu *= 2.0
            if mu > 1e16:
                converged, message = True, "no further descent possible"
                break
    return LMResult(x, cost, r, J, it, nfev, converged, message, history)


def covariance(J: np.ndarray, cost: float, n_obs: int) -> np.ndarray:
    """Linearized covariance (J^T J)^-1 * residual variance."""
    n = J.shape[1]
    A = J.T @ J
    norms = np.sqrt(np.diag(A))
    if np.any(norms == 0.0) or not np.all(np.isfinite(A)):
        raise RankDeficientFit("a free parameter has no effect on the residuals")
    scaled = A / np.outer(norms, norms)
    if np.linalg.cond(scaled) > 1e12:
        raise RankDeficientFit("free parameters are not separately constrained by the data")
    dof = max(n_obs - n, 1)
    return np.linalg.inv(A) * (2.0 * cost / dof)
