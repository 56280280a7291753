"""Numba-compiled kernels; same contracts as :mod:`numpy_backend`.

All row sums are explicit sequential loops, matching the numpy backend's
left-to-right accumulation so trailing zero padding cannot change results.
"""

import math

import numpy as np
from numba import njit

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


@njit(cache=True)
def softmax_rows_fwd(x):
    n, d = x.shape
    out = np.empty((n, d))
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            e = math.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        inv = 1.0 / s
        for j in range(d):
            out[i, j] *= inv
    return out


@njit(cache=True)
def softmax_rows_bwd(y, gy):
    n, d = y.shape
    gx = np.empty((n, d))
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += gy[i, j] * y[i, j]
        for j in range(d):
            gx[i, j] = y[i, j] * (gy[i, j] - dot)
    return gx


@njit(cache=True)
def log_softmax_rows_fwd(x):
    n, d = x.shape
    out = np.empty((n, d))
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            s += math.exp(x[i, j] - m)
        ls = math.log(s)
        for j in range(d):
            out[i, j] = x[i, j] - m - ls
    return out


@njit(cache=True)
def log_softmax_rows_bwd(logp, gy):
    n, d = logp.shape
    gx = np.empty((n, d))
    for i in range(n):
        gsum = 0.0
        for j in range(d):
            gsum += gy[i, j]
        for j in range(d):
            gx[i, j] = gy[i, j] - math.exp(logp[i, j]) * gsum
    return gx


@njit(cache=True)
def layer_norm_fwd(x, gain, bias, eps):
    n, d = x.shape
    y = np.empty((n, d))
    xhat = np.empty((n, d))
    rstd = np.empty((n, 1))
    for i in range(n):
        mean = 0.0
        for j in range(d):
            mean += x[i, j]
        mean /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mean
            var += c * c
        var /= d
        r = 1.0 / math.sqrt(var + eps)
        rstd[i, 0] = r
        for j in range(d):
            h = (x[i, j] - mean) * r
            xhat[i, j] = h
            y[i, j] = h * gain[j] + bias[j]
    return y, xhat, rstd


@njit(cache=True)
def layer_norm_bwd(xhat, rstd, gain, gy):
    n, d = xhat.shape
    gx = np.empty((n, d))
    ggain = np.zeros(d)
    gbias = np.zeros(d)
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            gh = gy[i, j] * gain[j]
            m1 += gh
            m2 += gh * xhat[i, j]
        m1 /= d
        m2 /= d
        r = rstd[i, 0]
        for j in range(d):
            gh = gy[i, j] * gain[j]
            gx[i, j] = (gh - m1 - xhat[i, j] * m2) * r
            ggain[j] += gy[i, j] * xhat[i, j]
            gbias[j] += gy[i, j]
    return gx, ggain, gbias


@njit(cache=True)
def gelu_fwd(x):
    n = x.shape[0]
    y = np.empty(n)
    for i in range(n):
        y[i] = 0.5 * x[i] * (1.0 + math.erf(x[i] * _INV_SQRT2))
    return y


@njit(cache=True)
def gelu_bwd(x, gy):
    n = x.shape[0]
    gx = np.empty(n)
    for i in range(n):
        cdf = 0.5 * (1.0 + math.erf(x[i] * _INV_SQRT2))
        pdf = math.exp(-0.5 * x[i] * x[i]) * _INV_SQRT_2PI
        gx[i] = gy[i] * (cdf + x[i] * pdf)
    return gx
