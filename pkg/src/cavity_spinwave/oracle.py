"""Fixed-step classical RK4 reference for the retrieval equations.

Deliberately independent of the adaptive kernel: plain numpy, no error
control, vectorized over a batch of parameter sets that share one time grid.
Used only to cross-check the adaptive integrator.
"""

from __future__ import annotations

import numpy as np


def _rhs(t, y, out, g, kappa, gamma, gamma_s, dp, d2, om0, t0, sig):
    a, p, s = y[0], y[1], y[2]
    om = om0 * np.exp(-((t - t0) ** 2) / (2.0 * sig**2))
    out[0] = -kappa * a + 1j * g * p
    out[1] = -(gamma + 1j * dp) * p + 1j * om * s + 1j * g * a
    out[2] = -(gamma_s + 1j * d2) * s + 1j * om * p
    out[3] = a.real**2 + a.imag**2
    out[4] = p.real**2 + p.imag**2
    out[5] = s.real**2 + s.imag**2
    return out


def rk4_batch(params, pulses, horizon: float, step: float):
    """Integrate every (params, pulse) pair to ``horizon`` with fixed ``step``.

    Returns an array of shape (6, batch): a, P, S at the horizon followed by
    the integrals of |a|^2, |P|^2, |S|^2.
    """
    arr = lambda f: np.array([f(p, q) for p, q in zip(params, pulses)], dtype=float)
    g = arr(lambda p, q: p.g)
    kappa = arr(lambda p, q: p.kappa)
    gamma = arr(lambda p, q: p.gamma)
    gamma_s = arr(lambda p, q: p.gamma_s)
    dp = arr(lambda p, q: p.delta_c)
    d2 = arr(lambda p, q: p.delta)
    om0 = arr(lambda p, q: q.peak_rabi)
    t0 = arr(lambda p, q: q.center)
    sig = arr(lambda p, q: q.sigma)
    args = (g, kappa, gamma, gamma_s, dp, d2, om0, t0, sig)

    n_steps = int(np.ceil(horizon / step))
    h = horizon / n_steps
    y = np.zeros((6, len(g)), dtype=complex)
    y[2] = 1.0
    k1, k2, k3, k4 = (np.empty_like(y) for _ in range(4))
    for i in range(n_steps):
        t = i * h
        _rhs(t, y, k1, *args)
        _rhs(t + h / 2, y + h / 2 * k1, k2, *args)
        _rhs(t + h / 2, y + h / 2 * k2, k3, *args)
        _rhs(t + h, y + h * k3, k4, *args)
        y += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def rk4_chi(params, pulses, horizon: float, step: float) -> np.ndarray:
    """Conversion efficiency from the fixed-step reference at ``step`` and ``step / 2``.

    Returns (chi_half_step, richardson_error_estimate).
    """
    kappa = np.array([p.kappa for p in params])
    coarse = 2 * kappa * rk4_batch(params, pulses, horizon, step)[3].real
    fine = 2 * kappa * rk4_batch(params, pulses, horizon, step / 2)[3].real
    return fine, np.abs(fine - coarse) / 15.0
