"""Pure-numpy convolution kernels (fallback backend).

The convolution is decomposed over the k_f x k_t kernel offsets; each
offset contributes one tensordot over the channel axis, which BLAS
handles.  Padding is materialized explicitly so every offset is a plain
strided slice.
"""

import numpy as np


def _out_extent(n, pad, dilation, k):
    return n + 2 * pad - dilation * (k - 1)


def conv_forward(x, w, pf, pt, df, dt):
    cin, F, T = x.shape
    cout, _, kf, kt = w.shape
    Fo = _out_extent(F, pf, df, kf)
    To = _out_extent(T, pt, dt, kt)
    xp = np.zeros((cin, F + 2 * pf, T + 2 * pt), dtype=x.dtype)
    xp[:, pf:pf + F, pt:pt + T] = x
    y = np.zeros((cout, Fo, To), dtype=x.dtype)
    for a in range(kf):
        for b in range(kt):
            patch = xp[:, df * a:df * a + Fo, dt * b:dt * b + To]
            y += np.tensordot(w[:, :, a, b], patch, axes=([1], [0]))
    return y


def conv_backward_input(gy, w, F, T, pf, pt, df, dt):
    cout, Fo, To = gy.shape
    _, cin, kf, kt = w.shape
    gxp = np.zeros((cin, F + 2 * pf, T + 2 * pt), dtype=gy.dtype)
    for a in range(kf):
        for b in range(kt):
            contrib = np.tensordot(w[:, :, a, b], gy, axes=([0], [0]))
            gxp[:, df * a:df * a + Fo, dt * b:dt * b + To] += contrib
    return np.ascontiguousarray(gxp[:, pf:pf + F, pt:pt + T])


def conv_backward_weights(gy, x, kf, kt, pf, pt, df, dt):
    cin, F, T = x.shape
    cout, Fo, To = gy.shape
    xp = np.zeros((cin, F + 2 * pf, T + 2 * pt), dtype=x.dtype)
    xp[:, pf:pf + F, pt:pt + T] = x
    gw = np.zeros((cout, cin, kf, kt), dtype=gy.dtype)
    for a in range(kf):
        for b in range(kt):
            patch = xp[:, df * a:df * a + Fo, dt * b:dt * b + To]
            gw[:, :, a, b] = np.tensordot(gy, patch, axes=([1, 2], [1, 2]))
    return gw
