"""Compiled Dormand-Prince 5(4) kernel for the retrieval equations.

State: complex amplitudes (a, P, S) plus three real accumulators holding
the running integrals of |a|^2, |P|^2 and |S|^2, so the decay budget comes
out of the same error-controlled steps as the dynamics.
"""

import numpy as np
from numba import njit

# Butcher tableau (Dormand & Prince 1980)
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40

# quartic continuous extension, rows k1..k7, columns theta^1..theta^4
DENSE = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

OK, MAX_STEPS_EXCEEDED, NOT_FINITE = 0, 1, 2


@njit(cache=True)
def _rhs(t, z, out, g, kappa, gamma, gamma_s, delta_p, delta_two, omega0, t0, inv2sig2):
    a = z[0]
    p = z[1]
    s = z[2]
    om = omega0 * np.exp(-(t - t0) * (t - t0) * inv2sig2)
    out[0] = -kappa * a + 1j * g * p
    out[1] = -(gamma + 1j * delta_p) * p + 1j * om * s + 1j * g * a
    out[2] = -(gamma_s + 1j * delta_two) * s + 1j * om * p
    out[3] = a.real * a.real + a.imag * a.imag
    out[4] = p.real * p.real + p.imag * p.imag
    out[5] = s.real * s.real + s.imag * s.imag


@njit(cache=True)
def integrate(g, kappa, gamma, gamma_s, delta_p, delta_two, omega0, t0, sigma,
              s0, t_end, rtol, atol, max_step, sample_times, max_steps):
    """Integrate from t=0 with a(0)=P(0)=0, S(0)=s0 up to ``t_end``.

    Returns (status, y_final, samples, n_accepted, n_rejected) where y_final
    holds (a, P, S, int|a|^2, int|P|^2, int|S|^2) as complex128 and samples
    holds a(t) at ``sample_times`` (ascending, within [0, t_end]).
    """
    inv2sig2 = 0.5 / (sigma * sigma)
    n = 6
    y = np.zeros(n, dtype=np.complex128)
    y[2] = s0
    k = np.zeros((7, n), dtype=np.complex128)
    tmp = np.zeros(n, dtype=np.complex128)
    ynew = np.zeros(n, dtype=np.complex128)
    samples = np.zeros(sample_times.shape[0], dtype=np.complex128)
    n_samples = sample_times.shape[0]
    si = 0
    while si < n_samples and sample_times[si] <= 0.0:
        samples[si] = y[0]
        si += 1

    t = 0.0
    scale = kappa + gamma + gamma_s + abs(delta_p) + abs(delta_two) + g + omega0 + 1.0
    h = min(max_step, 0.01 / scale, t_end)
    _rhs(t, y, k[0], g, kappa, gamma, gamma_s, delta_p, delta_two, omega0, t0, inv2sig2)
    accepted = 0
    rejected = 0
    while t < t_end:
        if accepted + rejected >= max_steps:
            return MAX_STEPS_EXCEEDED, y, samples, accepted, rejected
        last = False
        if t + h >= t_end:
            h = t_end - t
            last = True
        for i in range(n):
            tmp[i] = y[i] + h * A21 * k[0, i]
        _rhs(t + C2 * h, tmp, k[1], g, kappa, gamma, gamma_s, delta_p, delta_two, omega0, t0, inv2sig2)
        for i in range(n):
            tmp[i] = y[i] + h * (A31 * k[0, i] + A32 * k[1, i])
        _rhs(t + C3 * h, tmp, k[2], g, kappa, gamma, gamma_s, delta_p, delta_two, omega0, t0, inv2sig2)
        for i in range(n):
            tmp[i] = y[i] + h * (A41 * k[0, i] + A42 * k[1, i] + A43 * k[2, i])
        _rhs(t + C4 * h, tmp, k[3], g, kappa, gamma, gamma_s, delta_p, delta_two, omega0, t0, inv2sig2)
        for i in range(n):
            tmp[i] = y[i] + h * (A51 * k[0, i] + A52 * k[1, i] + A53 * k[2, i] + A54 * k[3, i])
        _rhs(t + C5 * h, tmp, k[4], g, kappa, gamma, gamma_s, delta_p, delta_two, omega0, t0, inv2sig2)
        for i in range(n):
            tmp[i] = y[i] + h * (A61 * k[0, i] + A62 * k[1, i] + A63 * k[2, i] + A64 * k[3, i]
                                 + A65 * k[4, i])
        _rhs(t + h, tmp, k[5], g, kappa, gamma, gamma_s, delta_p, delta_two, omega0, t0, inv2sig2)
        for i in range(n):
            ynew[i] = y[i] + h * (B1 * k[0, i] + B3 * k[2, i] + B4 * k[3, i] + B5 * k[4, i]
                                  + B6 * k[5, i])
        _rhs(t + h, ynew, k[6], g, kappa, gamma, gamma_s, delta_p, delta_two, omega0, t0, inv2sig2)

        err = 0.0
        for i in range(n):
            e = h * (E1 * k[0, i] + E3 * k[2, i] + E4 * k[3, i] + E5 * k[4, i] + E6 * k[5, i]
                     + E7 * k[6, i])
            sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
            r = abs(e) / sc
            err += r * r
        err = np.sqrt(err / n)
        if not np.isfinite(err):
            return NOT_FINITE, y, samples, accepted, rejected

        if err <= 1.0:
            t_new = t_end if last else t + h
            while si < n_samples and sample_times[si] <= t_new:
                theta = (sample_times[si] - t) / h
                th1 = theta
                th2 = theta * theta
                th3 = th2 * theta
                th4 = th3 * theta
                acc = 0.0 + 0.0j
                for j in range(7):
                    q = DENSE[j, 0] * th1 + DENSE[j, 1] * th2 + DENSE[j, 2] * th3 + DENSE[j, 3] * th4
                    acc += q * k[j, 0]
                samples[si] = y[0] + h * acc
                si += 1
            for i in range(n):
                y[i] = ynew[i]
                k[0, i] = k[6, i]
            t = t_new
            accepted += 1
            factor = 10.0 if err == 0.0 else min(10.0, 0.9 * err ** -0.2)
        else:
            rejected += 1
            factor = max(0.2, 0.9 * err ** -0.2)
        h = min(h * factor, max_step)
    return OK, y, samples, accepted, rejected
