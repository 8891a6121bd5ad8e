"""Numba-jitted convolution kernels (accelerated backend).

All three kernels are written in gather form: each thread owns a disjoint
set of output elements and accumulates them in a fixed order, so results
are bitwise reproducible for any thread count.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def conv_forward(x, w, pf, pt, df, dt):
    cin, F, T = x.shape
    cout, _, kf, kt = w.shape
    Fo = F + 2 * pf - df * (kf - 1)
    To = T + 2 * pt - dt * (kt - 1)
    y = np.zeros((cout, Fo, To), dtype=x.dtype)
    for ofo in prange(cout * Fo):
        o = ofo // Fo
        fo = ofo % Fo
        yrow = y[o, fo]
        for a in range(kf):
            fi = fo - pf + df * a
            if fi < 0 or fi >= F:
                continue
            for i in range(cin):
                xrow = x[i, fi]
                for b in range(kt):
                    t0 = dt * b - pt
                    lo = max(0, -t0)
                    hi = min(To, T - t0)
                    wv = w[o, i, a, b]
                    for to in range(lo, hi):
                        yrow[to] += wv * xrow[to + t0]
    return y


@njit(cache=True, parallel=True)
def conv_backward_input(gy, w, F, T, pf, pt, df, dt):
    cout, Fo, To = gy.shape
    cin = w.shape[1]
    kf = w.shape[2]
    kt = w.shape[3]
    gx = np.zeros((cin, F, T), dtype=gy.dtype)
    for if_ in prange(cin * F):
        i = if_ // F
        f = if_ % F
        grow = gx[i, f]
        for a in range(kf):
            fo = f + pf - df * a
            if fo < 0 or fo >= Fo:
                continue
            for o in range(cout):
                gyrow = gy[o, fo]
                for b in range(kt):
                    t0 = pt - dt * b
                    lo = max(0, -t0)
                    hi = min(T, To - t0)
                    wv = w[o, i, a, b]
                    for t in range(lo, hi):
                        grow[t] += wv * gyrow[t + t0]
    return gx


@njit(cache=True, parallel=True)
def conv_backward_weights(gy, x, kf, kt, pf, pt, df, dt):
    cin, F, T = x.shape
    cout, Fo, To = gy.shape
    gw = np.zeros((cout, cin, kf, kt), dtype=gy.dtype)
    for oi in prange(cout * cin):
        o = oi // cin
        i = oi % cin
        for a in range(kf):
            for b in range(kt):
                acc = 0.0
                for fo in range(Fo):
                    fi = fo - pf + df * a
                    if fi < 0 or fi >= F:
                        continue
                    gyrow = gy[o, fo]
                    xrow = x[i, fi]
                    t0 = dt * b - pt
                    lo = max(0, -t0)
                    hi = min(To, T - t0)
                    for to in range(lo, hi):
                        acc += gyrow[to] * xrow[to + t0]
                gw[o, i, a, b] = acc
    return gw
