"""Least-squares estimation of model parameters from measured spectra.

Two forward models: the read-out efficiency spectrum chi(delta_r), with
free parameters among ``g``, ``rabi`` and ``delta_c``, and the probe
reflectance spectrum, with the atom number ``n_atoms`` as the free parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .linear import TwoLevelSystemParams, reflectance
from .lm import RankDeficientFit, covariance, levenberg_marquardt
from .retrieval import GAMMA, GAMMA_S, KAPPA, ReadPulse, ThreeLevelParams, retrieval_chi

EFFICIENCY = "efficiency_spectrum"
REFLECTANCE = "reflectance_spectrum"

EFFICIENCY_PARAMS = ("g", "rabi", "delta_c")
EFFICIENCY_FIXED = {"kappa": KAPPA, "gamma": GAMMA, "gamma_s": GAMMA_S, "fwhm": ReadPulse(0.0).fwhm,
                    "center": None, "horizon": None, "tol": 1e-9}
REFLECTANCE_FIXED = {"delta_c": 0.0}

__all__ = ["FitProblem", "FitReport", "RankDeficientFit", "fit", "fit_efficiency_spectrum",
           "fit_reflectance_N", "poisson_weights", "efficiency_model", "reflectance_model"]


@dataclass
class FitProblem:
    """Observations (x, y, weight) plus the free/fixed split of model parameters.

    ``free_params`` maps name -> (initial, lower, upper).
    """

    x: np.ndarray
    y: np.ndarray
    model_kind: str
    free_params: dict
    fixed_params: dict = field(default_factory=dict)
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.weights = np.ones_like(self.y) if self.weights is None else np.asarray(self.weights, dtype=float)
        if not (self.x.shape == self.y.shape == self.weights.shape) or self.x.ndim != 1:
            raise ValueError("x, y and weights must be 1-D arrays of equal length")
        if self.model_kind not in (EFFICIENCY, REFLECTANCE):
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if not self.free_params:
            raise ValueError("no free parameters")
        if self.x.size < 3 * len(self.free_params):
            raise ValueError(f"need at least {3 * len(self.free_params)} observations, got {self.x.size}")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")
        allowed = EFFICIENCY_PARAMS if self.model_kind == EFFICIENCY else ("n_atoms",)
        for name, (x0, lo, hi) in self.free_params.items():
            if name not in allowed:
                raise ValueError(f"{name!r} is not a free parameter of the {self.model_kind} model")
            if not lo <= x0 <= hi:
                raise ValueError(f"initial guess for {name} outside its bounds")


@dataclass
class FitReport:
    estimates: dict
    confidence_intervals: dict  # name -> (low, high), 95 %
    standard_errors: dict
    residual_rms: float
    iterations: int
    converged: bool
    message: str = ""
    cost_history: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "estimates": self.estimates,
            "confidence_intervals": {k: list(v) for k, v in self.confidence_intervals.items()},
            "standard_errors": self.standard_errors,
            "residual_rms": self.residual_rms,
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
        }


def poisson_weights(y, floor: float = 1.0) -> np.ndarray:
    """Inverse-variance weights for counting data."""
    return 1.0 / np.maximum(np.asarray(y, dtype=float), floor)


def efficiency_model(x, g, rabi, delta_c, kappa=KAPPA, gamma=GAMMA, gamma_s=GAMMA_S,
                     fwhm=EFFICIENCY_FIXED["fwhm"], center=None, horizon=None, tol=1e-9):
    pulse = ReadPulse(rabi, fwhm=fwhm, center=center)
    base = ThreeLevelParams(g=g, kappa=kappa, gamma=gamma, gamma_s=gamma_s, delta_c=delta_c)
    return np.array([retrieval_chi(base.replace(delta_r=float(d)), pulse, horizon, tol) for d in x])


def reflectance_model(x, n_atoms, g0, kappa, kappa0, gamma, delta_c=0.0):
    g = g0 * math.sqrt(max(n_atoms, 0.0))
    return reflectance(x, TwoLevelSystemParams(g=g, kappa=kappa, kappa0=kappa0, gamma=gamma, delta_c=delta_c))


def fit(problem: FitProblem, max_iter: int = 100, executor=None) -> FitReport:
    names = list(problem.free_params)
    x0 = np.array([problem.free_params[k][0] for k in names], dtype=float)
    lo = np.array([problem.free_params[k][1] for k in names], dtype=float)
    hi = np.array([problem.free_params[k][2] for k in names], dtype=float)
    sw = np.sqrt(problem.weights)

    if problem.model_kind == EFFICIENCY:
        fixed = {**EFFICIENCY_FIXED, **problem.fixed_params}
        model = efficiency_model
        # the adaptive solver makes the model piecewise smooth at the solver tolerance
        rel_step = math.sqrt(max(fixed["tol"], np.finfo(float).eps))
    else:
        fixed = {**REFLECTANCE_FIXED, **problem.fixed_params}
        missing = {"g0", "kappa", "kappa0", "gamma"} - set(fixed)
        if missing:
            raise ValueError(f"reflectance fit needs fixed {sorted(missing)}")
        model = reflectance_model
        rel_step = None

    def residuals(theta):
        kw = dict(fixed)
        kw.update(zip(names, theta))
        return sw * (model(problem.x, **kw) - problem.y)

    res = levenberg_marquardt(residuals, x0, lo, hi, rel_step=rel_step, max_iter=max_iter, executor=executor)
    m = problem.x.size
    cov = covariance(res.jac, res.cost, m)
    se = np.sqrt(np.diag(cov))
    q = stats.t.ppf(0.975, max(m - len(names), 1))
    estimates = {k: float(v) for k, v in zip(names, res.x)}
    ci = {k: (float(v - q * s), float(v + q * s)) for k, v, s in zip(names, res.x, se)}
    # a zero-residual fit has no scatter to scale the intervals; keep them positive-width
    for k, (a, b) in ci.items():
        if a == b:
            eps = np.spacing(abs(a)) if a != 0 else np.finfo(float).tiny
            ci[k] = (a - eps, b + eps)
    return FitReport(
        estimates=estimates,
        confidence_intervals=ci,
        standard_errors={k: float(s) for k, s in zip(names, se)},
        residual_rms=float(math.sqrt(2.0 * res.cost / m)),
        iterations=res.iterations,
        converged=res.converged,
        message=res.message,
        cost_history=res.cost_history,
    )


def fit_efficiency_spectrum(problem: FitProblem, **kw) -> FitReport:
    if problem.model_kind != EFFICIENCY:
        raise ValueError("expected an efficiency_spectrum problem")
    return fit(problem, **kw)


def fit_reflectance_N(problem: FitProblem, **kw) -> FitReport:
    if problem.model_kind != REFLECTANCE:
        raise ValueError("expected a reflectance_spectrum problem")
    if set(problem.free_params) != {"n_atoms"}:
        raise ValueError("the reflectance fit has n_atoms as its only free parameter")
    return fit(problem, **kw)
