"""Compiled generator fields and the Dormand-Prince stepper used for builtins.

A field kernel has the signature ``field(x, t, params, out)``: it writes
``sum_i t_i X_i(x)`` for one point into ``out``.  Kernels are passed to
:func:`dopri` as first-class functions.
"""

import numpy as np
from numba import njit

_CACHE = True


@njit(cache=_CACHE)
def oscillator_field(x, t, params, out):
    n = t.shape[0]
    for i in range(n):
        out[i] = t[i] * x[n + i]
        out[n + i] = -t[i] * params[i] * x[i]


@njit(cache=_CACHE)
def champagne_field(x, t, params, out):
    q1, q2, p1, p2 = x[0], x[1], x[2], x[3]
    g = 4.0 * (q1 * q1 + q2 * q2) - 2.0
    out[0] = t[0] * p1 - t[1] * q2
    out[1] = t[0] * p2 + t[1] * q1
    out[2] = -t[0] * q1 * g - t[1] * p2
    out[3] = -t[0] * q2 * g + t[1] * p1


@njit(cache=_CACHE)
def translation_field(x, t, params, out):
    n = t.shape[0]
    k = x.shape[0] - n
    for i in range(k):
        out[i] = 0.0
    for i in range(n):
        out[k + i] = t[i]


@njit(cache=_CACHE)
def _eval(field, Y, T, params, out):
    for j in range(Y.shape[0]):
        field(Y[j], T[j], params, out[j])


@njit(cache=_CACHE)
def dopri(field, y0, T, params, atol, rtol, span, h0, max_steps):
    """Batch DP5(4) over [0, span]; returns (y, est_error, steps, last_h, status).

    status: 0 ok, 1 step underflow, 2 step budget exhausted.
    """
    m, D = y0.shape
    y = y0.copy()
    k1 = np.empty((m, D))
    k2 = np.empty((m, D))
    k3 = np.empty((m, D))
    k4 = np.empty((m, D))
    k5 = np.empty((m, D))
    k6 = np.empty((m, D))
    k7 = np.empty((m, D))
    yt = np.empty((m, D))
    ynew = np.empty((m, D))
    _eval(field, y, T, params, k1)
    h = h0
    if h <= 0.0:
        d0 = 0.0
        d1 = 0.0
        for j in range(m):
            for i in range(D):
                sc = atol + rtol * abs(y[j, i])
                d0 += (y[j, i] / sc) ** 2
                d1 += (k1[j, i] / sc) ** 2
        d0 = np.sqrt(d0 / (m * D))
        d1 = np.sqrt(d1 / (m * D))
        if d0 < 1e-5 or d1 < 1e-5:
            h = 1e-6
        else:
            h = 0.01 * d0 / d1
    if h > span:
        h = span
    t = 0.0
    est = 0.0
    steps = 0
    while t < span:
        if steps >= max_steps:
            return y, est, steps, h, 2
        if span - t < h * (1.0 + 1e-12):
            h = span - t
        for j in range(m):
            for i in range(D):
                yt[j, i] = y[j, i] + h * (0.2 * k1[j, i])
        _eval(field, yt, T, params, k2)
        for j in range(m):
            for i in range(D):
                yt[j, i] = y[j, i] + h * (3.0 / 40.0 * k1[j, i] + 9.0 / 40.0 * k2[j, i])
        _eval(field, yt, T, params, k3)
        for j in range(m):
            for i in range(D):
                yt[j, i] = y[j, i] + h * (44.0 / 45.0 * k1[j, i] - 56.0 / 15.0 * k2[j, i] + 32.0 / 9.0 * k3[j, i])
        _eval(field, yt, T, params, k4)
        for j in range(m):
            for i in range(D):
                yt[j, i] = y[j, i] + h * (
                    19372.0 / 6561.0 * k1[j, i]
                    - 25360.0 / 2187.0 * k2[j, i]
                    + 64448.0 / 6561.0 * k3[j, i]
                    - 212.0 / 729.0 * k4[j, i]
                )
        _eval(field, yt, T, params, k5)
        for j in range(m):
            for i in range(D):
                yt[j, i] = y[j, i] + h * (
                    9017.0 / 3168.0 * k1[j, i]
                    - 355.0 / 33.0 * k2[j, i]
                    + 46732.0 / 5247.0 * k3[j, i]
                    + 49.0 / 176.0 * k4[j, i]
                    - 5103.0 / 18656.0 * k5[j, i]
                )
        _eval(field, yt, T, params, k6)
        for j in range(m):
            for i in range(D):
                ynew[j, i] = y[j, i] + h * (
                    35.0 / 384.0 * k1[j, i]
                    + 500.0 / 1113.0 * k3[j, i]
                    + 125.0 / 192.0 * k4[j, i]
                    - 2187.0 / 6784.0 * k5[j, i]
                    + 11.0 / 84.0 * k6[j, i]
                )
        _eval(field, ynew, T, params, k7)
        enorm = 0.0
        emax = 0.0
        for j in range(m):
            acc = 0.0
            raw = 0.0
            for i in range(D):
                e = h * (
                    71.0 / 57600.0 * k1[j, i]
                    - 71.0 / 16695.0 * k3[j, i]
                    + 71.0 / 1920.0 * k4[j, i]
                    - 17253.0 / 339200.0 * k5[j, i]
                    + 22.0 / 525.0 * k6[j, i]
                    - 1.0 / 40.0 * k7[j, i]
                )
                sc = atol + rtol * max(abs(y[j, i]), abs(ynew[j, i]))
                acc += (e / sc) ** 2
                raw += e * e
            acc = np.sqrt(acc / D)
            if acc > enorm:
                enorm = acc
            raw = np.sqrt(raw)
            if raw > emax:
                emax = raw
        if enorm <= 1.0:
            if span - t > h:
                t = t + h
            else:
                t = span
            for j in range(m):
                for i in range(D):
                    y[j, i] = ynew[j, i]
                    k1[j, i] = k7[j, i]
            steps += 1
            est += emax
            if enorm == 0.0:
                fac = 5.0
            else:
                fac = min(5.0, 0.9 * enorm ** -0.2)
        else:
            fac = max(0.2, 0.9 * enorm ** -0.2)
        h = h * fac
        if h < 1e-14 * span:
            return y, est, steps, h, 1
    return y, est, steps, h, 0
