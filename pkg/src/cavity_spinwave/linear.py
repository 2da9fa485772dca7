"""Steady-state linear response of the atom-cavity system.

Dressed single-excitation eigenfrequencies and the weak-probe reflectance
of the cavity coupling mirror.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .units import mhz


@dataclass(frozen=True)
class TwoLevelSystemParams:
    """Two-level ensemble in a single-mode cavity.

    All rates are angular, in rad/us.  ``delta_c`` is omega_a - omega_c.
    ``omega_a`` is kept for bookkeeping only; every response function works
    with detunings relative to it.
    """

    g: float
    kappa: float
    kappa0: float
    gamma: float
    delta_c: float = 0.0
    omega_a: float = 0.0

    def __post_init__(self):
        if not self.kappa0 > 0.0:
            raise ValueError("kappa0 must be positive")
        if self.kappa < self.kappa0:
            raise ValueError("kappa must be >= kappa0")
        if not self.gamma > 0.0:
            raise ValueError("gamma must be positive")
        if self.g < 0.0:
            raise ValueError("g must be non-negative")


@dataclass(frozen=True)
class ReflectanceCurve:
    probe_detunings: np.ndarray
    reflectance: np.ndarray


def eigenfrequencies_two_level(g: float, delta_c: float) -> tuple[float, float]:
    """Return (omega_plus - omega_a, omega_minus - omega_a)."""
    if g < 0.0:
        raise ValueError("g must be non-negative")
    half = 0.5 * delta_c
    root = math.hypot(g, half)
    return half + root, half - root


def reflectance(offset, params: TwoLevelSystemParams):
    """Probe reflectance at ``offset`` = omega - omega_a (scalar or array).

    For nonzero ``delta_c`` the cavity pole is moved to omega_c while the
    atomic pole stays at omega_a.
    """
    x = np.asarray(offset, dtype=float)
    cavity = x + params.delta_c + 1j * params.kappa
    atom = x + 1j * params.gamma
    r = 1.0 - 2j * params.kappa0 / (cavity - params.g**2 / atom)
    out = np.abs(r) ** 2
    return float(out) if out.ndim == 0 else out


def default_probe_grid() -> np.ndarray:
    return np.linspace(mhz(-60.0), mhz(60.0), 601)


def reflectance_curve(params: TwoLevelSystemParams, grid=None) -> ReflectanceCurve:
    grid = default_probe_grid() if grid is None else np.asarray(grid, dtype=float)
    return ReflectanceCurve(grid, reflectance(grid, params))


def local_minima(values) -> np.ndarray:
    """Indices of strict interior local minima."""
    v = np.asarray(values)
    inner = (v[1:-1] < v[:-2]) & (v[1:-1] <= v[2:])
    return np.flatnonzero(inner) + 1
