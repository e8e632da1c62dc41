"""Pure-NumPy twin of the compiled integrator in ``_kernels.pyx``."""

import math

import numpy as np

C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
E1, E3, E4, E5, E6, E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40


def _table(t, tab_t0, tab_h, coef, k_lo, k_hi):
    k = min(max(int(math.floor((t - tab_t0) / tab_h)), k_lo), k_hi)
    s = t - (tab_t0 + k * tab_h)
    c = coef[k]
    vals = ((c[:, 0] * s + c[:, 1]) * s + c[:, 2]) * s + c[:, 3]
    return complex(vals[0], vals[1]), vals[2]


def rhs_eval(t, y, out, omegas, lam, g, gamma, kappa_loss, delta_1, tab_t0, tab_h, coef,
             k_lo, k_hi):
    n = y.shape[0] - 5
    omega, delta_2 = _table(t, tab_t0, tab_h, coef, k_lo, k_hi)
    c, e, r = y[n], y[n + 1], y[n + 2]
    modes = y[:n]
    out[:n] = -1j * (omegas * modes + lam * c)
    out[n] = -1j * (lam * modes.sum() + g * e) - kappa_loss * c
    out[n + 1] = -1j * (-delta_1 * e + g * c + omega * r) - gamma * e
    out[n + 2] = -1j * (delta_2 * r + omega.conjugate() * e)
    out[n + 3] = 2 * gamma * abs(e) ** 2
    out[n + 4] = 2 * kappa_loss * abs(c) ** 2


def dp45_advance(y, t, t_end, h, omegas, lam, g, gamma, kappa_loss, delta_1,
                 tab_t0, tab_h, coef, k_lo, k_hi, rtol, atol, h_min, max_steps, k1):
    args = (omegas, lam, g, gamma, kappa_loss, delta_1, tab_t0, tab_h, coef, k_lo, k_hi)
    k = [k1] + [np.empty_like(y) for _ in range(6)]
    accepted = rejected = 0
    status = 0
    h_next = h
    while t < t_end:
        if accepted + rejected >= max_steps:
            status = 2
            break
        step = h_next
        last = False
        if t + step >= t_end:
            step = t_end - t
            last = True
        if step < h_min and not last:
            status = 1
            break
        k1_, k2, k3, k4, k5, k6, k7 = k
        rhs_eval(t + C2 * step, y + step * A21 * k1_, k2, *args)
        rhs_eval(t + C3 * step, y + step * (A31 * k1_ + A32 * k2), k3, *args)
        rhs_eval(t + C4 * step, y + step * (A41 * k1_ + A42 * k2 + A43 * k3), k4, *args)
        rhs_eval(t + C5 * step, y + step * (A51 * k1_ + A52 * k2 + A53 * k3 + A54 * k4), k5, *args)
        rhs_eval(t + step, y + step * (A61 * k1_ + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5), k6, *args)
        ynew = y + step * (B1 * k1_ + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
        rhs_eval(t + step, ynew, k7, *args)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
        errvec = step * (E1 * k1_ + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        err = float(np.max(np.abs(errvec) / scale))
        if err <= 1.0:
            t = t_end if last else t + step
            y[:] = ynew
            k1_[:] = k7
            accepted += 1
            factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            if not last or step * factor > h_next:
                h_next = step * factor
        else:
            rejected += 1
            h_next = step * max(0.2, 0.9 * err ** -0.2)
    return h_next, accepted, rejected, status, t
