"""Efficiency spectra over (delta_r, delta_c) grids and optical-depth sweeps."""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .retrieval import IntegrationError, ReadPulse, ThreeLevelParams, dressed_eigenfrequencies, retrieval_chi


class UnresolvedSplitting(ValueError):
    """The efficiency row does not show two separate maxima."""


class ScanError(RuntimeError):
    def __init__(self, message, delta_c=None, delta_r=None):
        super().__init__(message)
        self.delta_c = delta_c
        self.delta_r = delta_r


@dataclass
class SpectrumGrid:
    """chi[i, j] is the efficiency at dc_axis[i], dr_axis[j]."""

    dr_axis: np.ndarray
    dc_axis: np.ndarray
    chi: np.ndarray
    peak_loci: list
    eigen_overlay: np.ndarray  # shape (2, len(dc_axis)): Delta_plus, Delta_minus

    def peak_separations(self) -> np.ndarray:
        """Separation of the two main maxima per row (nan where only one)."""
        return np.array([abs(p[1] - p[0]) if len(p) >= 2 else np.nan for p in self.peak_loci])


@dataclass
class OdSweepResult:
    od_values: np.ndarray
    splittings: np.ndarray  # nan where unresolved
    amplitude: float
    exponent: float
    amplitude_ci: tuple
    exponent_ci: tuple
    unresolved: list = field(default_factory=list)


# -- peak handling ----------------------------------------------------------

def local_maxima(row) -> np.ndarray:
    """Indices of interior points strictly above the left and not below the right neighbour."""
    v = np.asarray(row, dtype=float)
    inner = (v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:])
    return np.flatnonzero(inner) + 1


def refine_peak(x, y, i: int) -> tuple[float, float]:
    """Vertex of the parabola through points i-1, i, i+1 (position, value)."""
    x0, x1, x2 = x[i - 1], x[i], x[i + 1]
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
    a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
    b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom
    if a >= 0.0:
        return float(x1), float(y1)
    xv = -b / (2.0 * a)
    xv = min(max(xv, x0), x2)
    c = y1 - a * x1 * x1 - b * x1
    return float(xv), float(a * xv * xv + b * xv + c)


def main_peaks(row, axis, count: int = 2) -> list:
    """Refined positions of the ``count`` largest interior maxima, sorted by position."""
    row = np.asarray(row, dtype=float)
    axis = np.asarray(axis, dtype=float)
    idx = local_maxima(row)
    if len(idx) == 0:
        return []
    top = idx[np.argsort(row[idx], kind="stable")[::-1][:count]]
    return sorted(refine_peak(axis, row, int(i))[0] for i in top)


def extract_splitting(chi_row, dr_axis) -> float:
    """Separation of the two largest interior maxima of an efficiency row."""
    chi_row = np.asarray(chi_row, dtype=float)
    if chi_row.size < 5:
        raise ValueError("need at least 5 points to locate a splitting")
    peaks = main_peaks(chi_row, dr_axis)
    if len(peaks) < 2:
        raise UnresolvedSplitting(f"found {len(peaks)} interior maximum, splitting unresolved")
    return peaks[1] - peaks[0]


# -- grid evaluation --------------------------------------------------------

def _point(args):
    params, pulse, horizon, tol = args
    try:
        return retrieval_chi(params, pulse, horizon, tol)
    except IntegrationError as exc:
        raise ScanError(f"{exc} at delta_c={params.delta_c!r}, delta_r={params.delta_r!r} rad/us",
                        params.delta_c, params.delta_r) from exc


def _cache_key(base: ThreeLevelParams, pulse: ReadPulse, horizon, tol) -> str:
    payload = json.dumps({
        "g": base.g, "kappa": base.kappa, "gamma": base.gamma, "gamma_s": base.gamma_s,
        "rabi": pulse.peak_rabi, "fwhm": pulse.fwhm, "center": pulse.center,
        "horizon": horizon, "tol": tol,
    }, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:24]


class ChiCache:
    """On-disk store of grid points, one JSON file per parameter hash."""

    def __init__(self, directory):
        self.directory = os.fspath(directory)

    def _path(self, key):
        return os.path.join(self.directory, f"chi-{key}.json")

    def load(self, key) -> dict:
        try:
            with open(self._path(key)) as fh:
                return json.load(fh)
        except FileNotFoundError:
            return {}

    def store(self, key, table: dict):
        os.makedirs(self.directory, exist_ok=True)
        tmp = self._path(key) + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(table, fh, sort_keys=True)
        os.replace(tmp, self._path(key))


def evaluate_points(base: ThreeLevelParams, pulse: ReadPulse, points, horizon=None, tol=1e-9,
                    workers: int = 1, cache: ChiCache | None = None) -> np.ndarray:
    """chi at each (delta_c, delta_r) in ``points``; order-preserving."""
    points = [(float(dc), float(dr)) for dc, dr in points]
    key = _cache_key(base, pulse, horizon, tol) if cache is not None else None
    table = cache.load(key) if cache is not None else {}
    labels = [f"{dc!r},{dr!r}" for dc, dr in points]
    todo = [i for i, lab in enumerate(labels) if lab not in table]
    jobs = [(base.replace(delta_c=points[i][0], delta_r=points[i][1]), pulse, horizon, tol) for i in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(_point, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        values = [_point(job) for job in jobs]
    for i, v in zip(todo, values):
        table[labels[i]] = v
    if cache is not None and todo:
        cache.store(key, table)
    return np.array([table[lab] for lab in labels], dtype=float)


def scan_efficiency(base: ThreeLevelParams, pulse: ReadPulse, dr_grid, dc_grid, horizon=None,
                    tol: float = 1e-9, workers: int = 1, cache: ChiCache | None = None) -> SpectrumGrid:
    """Evaluate chi on the full (delta_c, delta_r) grid and locate the maxima per row."""
    dr = np.asarray(dr_grid, dtype=float)
    dc = np.asarray(dc_grid, dtype=float)
    for name, ax in (("delta_r", dr), ("delta_c", dc)):
        if ax.ndim != 1 or ax.size == 0:
            raise ValueError(f"{name} grid must be a non-empty 1-D array")
        if ax.size > 1 and not np.all(np.diff(ax) > 0):
            raise ValueError(f"{name} grid must be strictly increasing")
    points = [(x, y) for x in dc for y in dr]
    chi = evaluate_points(base, pulse, points, horizon, tol, workers, cache).reshape(dc.size, dr.size)
    loci = [np.array(main_peaks(row, dr)) if dr.size >= 3 else np.zeros(0) for row in chi]
    overlay = np.array([dressed_eigenfrequencies(base.g, pulse.peak_rabi, x) for x in dc]).T.reshape(2, dc.size)
    return SpectrumGrid(dr, dc, chi, loci, overlay)


# -- optical depth ----------------------------------------------------------

def coupling_for_od(od, od_ref: float, g_ref: float):
    """g scales with sqrt(N) and N with OD."""
    return g_ref * np.sqrt(np.asarray(od, dtype=float) / od_ref)


def fit_power_law(x, y, confidence: float = 0.95):
    """Least-squares fit of y = A x^beta on log-log values.

    Returns (A, beta, A_ci, beta_ci).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("power-law fit needs at least two resolved points")
    X = np.column_stack([np.ones_like(x), np.log(x)])
    coef, *_ = np.linalg.lstsq(X, np.log(y), rcond=None)
    dof = x.size - 2
    if dof > 0:
        resid = np.log(y) - X @ coef
        s2 = resid @ resid / dof
        cov = s2 * np.linalg.inv(X.T @ X)
        q = stats.t.ppf(0.5 + confidence / 2.0, dof)
        half = q * np.sqrt(np.diag(cov))
    else:
        half = np.array([math.inf, math.inf])
    log_a, beta = coef
    a_ci = (math.exp(log_a - half[0]), math.exp(log_a + half[0]))
    return math.exp(log_a), float(beta), a_ci, (float(beta - half[1]), float(beta + half[1]))


def od_sweep(base: ThreeLevelParams, pulse: ReadPulse, od_values, od_ref: float, g_ref: float,
             n_dr: int = 241, span: float = 1.6, horizon=None, tol: float = 1e-9,
             workers: int = 1, cache: ChiCache | None = None) -> OdSweepResult:
    """Splitting of the efficiency maxima at delta_c = 0 versus optical depth.

    Each OD gets its own delta_r grid spanning +-``span`` * g(OD).
    """
    od = np.asarray(od_values, dtype=float)
    if od.size < 2:
        raise ValueError("od sweep needs at least two optical depths to fit a scaling law")
    if np.any(od <= 0) or np.any(np.diff(od) <= 0):
        raise ValueError("optical depths must be positive and strictly increasing")
    splittings = np.full(od.size, np.nan)
    unresolved = []
    for i, (o, g) in enumerate(zip(od, coupling_for_od(od, od_ref, g_ref))):
        params = base.replace(g=float(g), delta_c=0.0)
        half = span * max(g, pulse.peak_rabi, params.kappa)
        dr = np.linspace(-half, half, n_dr)
        row = evaluate_points(params, pulse, [(0.0, x) for x in dr], horizon, tol, workers, cache)
        try:
            splittings[i] = extract_splitting(row, dr)
        except UnresolvedSplitting:
            unresolved.append(float(o))
    ok = np.isfinite(splittings)
    a, beta, a_ci, beta_ci = fit_power_law(od[ok], splittings[ok])
    return OdSweepResult(od, splittings, a, beta, a_ci, beta_ci, unresolved)
