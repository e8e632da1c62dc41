# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled single-excitation integrator.

Dormand-Prince 5(4) stepping of the arrowhead Hamiltonian with the two loss
accumulators appended to the state.  Mirrors ``_fallback.dp45_advance``.
"""

from libc.math cimport floor, fabs, sqrt, pow, fmax, fmin
import numpy as np

cdef extern from "complex.h" nogil:
    double complex conj(double complex)
    double creal(double complex)
    double cimag(double complex)

cdef double complex I = 1j

# Dormand-Prince coefficients
cdef double C2 = 1.0 / 5.0, C3 = 3.0 / 10.0, C4 = 4.0 / 5.0, C5 = 8.0 / 9.0
cdef double A21 = 1.0 / 5.0
cdef double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0, A53 = 64448.0 / 6561.0
cdef double A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0, A63 = 46732.0 / 5247.0
cdef double A64 = 49.0 / 176.0, A65 = -5103.0 / 18656.0
cdef double B1 = 35.0 / 384.0, B3 = 500.0 / 1113.0, B4 = 125.0 / 192.0
cdef double B5 = -2187.0 / 6784.0, B6 = 11.0 / 84.0
cdef double E1 = 71.0 / 57600.0, E3 = -71.0 / 16695.0, E4 = 71.0 / 1920.0
cdef double E5 = -17253.0 / 339200.0, E6 = 22.0 / 525.0, E7 = -1.0 / 40.0


cdef inline double _poly(const double[:, :, ::1] coef, Py_ssize_t k, int ch, double s) noexcept nogil:
    return ((coef[k, ch, 0] * s + coef[k, ch, 1]) * s + coef[k, ch, 2]) * s + coef[k, ch, 3]


cdef inline void _rhs(double t, const double complex[::1] y, double complex[::1] out,
                      const double[::1] omegas, Py_ssize_t n, double lam, double g,
                      double gamma, double kappa_loss, double delta_1,
                      double tab_t0, double tab_h, const double[:, :, ::1] coef,
                      Py_ssize_t k_lo, Py_ssize_t k_hi) noexcept nogil:
    cdef Py_ssize_t k = <Py_ssize_t> floor((t - tab_t0) / tab_h)
    if k < k_lo:
        k = k_lo
    elif k > k_hi:
        k = k_hi
    cdef double s = t - (tab_t0 + k * tab_h)
    cdef double complex omega = _poly(coef, k, 0, s) + I * _poly(coef, k, 1, s)
    cdef double delta_2 = _poly(coef, k, 2, s)
    cdef double complex c = y[n], e = y[n + 1], r = y[n + 2]
    cdef double complex total = 0
    cdef Py_ssize_t i
    for i in range(n):
        total = total + y[i]
        out[i] = -I * (omegas[i] * y[i] + lam * c)
    out[n] = -I * (lam * total + g * e) - kappa_loss * c
    out[n + 1] = -I * (-delta_1 * e + g * c + omega * r) - gamma * e
    out[n + 2] = -I * (delta_2 * r + conj(omega) * e)
    out[n + 3] = 2.0 * gamma * (creal(e) * creal(e) + cimag(e) * cimag(e))
    out[n + 4] = 2.0 * kappa_loss * (creal(c) * creal(c) + cimag(c) * cimag(c))


cdef inline double _cabs(double complex z) noexcept nogil:
    return sqrt(creal(z) * creal(z) + cimag(z) * cimag(z))


def dp45_advance(double complex[::1] y, double t, double t_end, double h,
                 const double[::1] omegas, double lam, double g, double gamma,
                 double kappa_loss, double delta_1, double tab_t0, double tab_h,
                 const double[:, :, ::1] coef, Py_ssize_t k_lo, Py_ssize_t k_hi,
                 double rtol, double atol,
                 double h_min, long max_steps, double complex[::1] k1):
    """Advance ``y`` in place from ``t`` to ``t_end``.

    The pulse table row index is clamped to ``[k_lo, k_hi]`` so that a
    segment between two pulse discontinuities never sees its neighbours.
    ``k1`` holds the derivative at ``(t, y)`` on entry and at ``(t_end, y)``
    on exit (first-same-as-last).  Returns ``(h_next, accepted, rejected,
    status, t_reached)`` with status 0 = ok, 1 = step underflow, 2 = too many
    steps.
    """
    cdef Py_ssize_t dim = y.shape[0]
    cdef Py_ssize_t n = dim - 5
    cdef Py_ssize_t i
    cdef double complex[::1] k2 = np.empty(dim, dtype=complex)
    cdef double complex[::1] k3 = np.empty(dim, dtype=complex)
    cdef double complex[::1] k4 = np.empty(dim, dtype=complex)
    cdef double complex[::1] k5 = np.empty(dim, dtype=complex)
    cdef double complex[::1] k6 = np.empty(dim, dtype=complex)
    cdef double complex[::1] k7 = np.empty(dim, dtype=complex)
    cdef double complex[::1] tmp = np.empty(dim, dtype=complex)
    cdef double complex[::1] ynew = np.empty(dim, dtype=complex)
    cdef long accepted = 0, rejected = 0
    cdef int status = 0
    cdef double step, err, sc, ei, factor, h_next = h
    cdef bint last

    with nogil:
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

            for i in range(dim):
                tmp[i] = y[i] + step * A21 * k1[i]
            _rhs(t + C2 * step, tmp, k2, omegas, n, lam, g, gamma, kappa_loss, delta_1, tab_t0, tab_h, coef, k_lo, k_hi)
            for i in range(dim):
                tmp[i] = y[i] + step * (A31 * k1[i] + A32 * k2[i])
            _rhs(t + C3 * step, tmp, k3, omegas, n, lam, g, gamma, kappa_loss, delta_1, tab_t0, tab_h, coef, k_lo, k_hi)
            for i in range(dim):
                tmp[i] = y[i] + step * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
            _rhs(t + C4 * step, tmp, k4, omegas, n, lam, g, gamma, kappa_loss, delta_1, tab_t0, tab_h, coef, k_lo, k_hi)
            for i in range(dim):
                tmp[i] = y[i] + step * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
            _rhs(t + C5 * step, tmp, k5, omegas, n, lam, g, gamma, kappa_loss, delta_1, tab_t0, tab_h, coef, k_lo, k_hi)
            for i in range(dim):
                tmp[i] = y[i] + step * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
            _rhs(t + step, tmp, k6, omegas, n, lam, g, gamma, kappa_loss, delta_1, tab_t0, tab_h, coef, k_lo, k_hi)
            for i in range(dim):
                ynew[i] = y[i] + step * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
            _rhs(t + step, ynew, k7, omegas, n, lam, g, gamma, kappa_loss, delta_1, tab_t0, tab_h, coef, k_lo, k_hi)

            err = 0.0
            for i in range(dim):
                sc = atol + rtol * fmax(_cabs(y[i]), _cabs(ynew[i]))
                ei = _cabs(step * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i]
                                   + E6 * k6[i] + E7 * k7[i])) / sc
                if ei > err:
                    err = ei

            if err <= 1.0:
                t = t_end if last else t + step
                for i in range(dim):
                    y[i] = ynew[i]
                    k1[i] = k7[i]
                accepted += 1
                if err == 0.0:
                    factor = 5.0
                else:
                    factor = fmin(5.0, fmax(0.2, 0.9 * pow(err, -0.2)))
                if not last or step * factor > h_next:
                    h_next = step * factor
            else:
                rejected += 1
                factor = fmax(0.2, 0.9 * pow(err, -0.2))
                h_next = step * factor

    return h_next, accepted, rejected, status, t


def rhs_eval(double t, const double complex[::1] y, double complex[::1] out,
             const double[::1] omegas, double lam, double g, double gamma,
             double kappa_loss, double delta_1, double tab_t0, double tab_h,
             const double[:, :, ::1] coef, Py_ssize_t k_lo, Py_ssize_t k_hi):
    """Evaluate the right-hand side into ``out``."""
    _rhs(t, y, out, omegas, y.shape[0] - 5, lam, g, gamma, kappa_loss, delta_1,
         tab_t0, tab_h, coef, k_lo, k_hi)
