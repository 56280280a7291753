"""Pure-numpy reference kernels.

Row reductions inside the softmax kernels use ``cumsum`` rather than ``sum``:
cumsum evaluates strictly left to right, so appending exact-zero terms (the
product of attention masking) never perturbs the result bitwise. ``np.sum``
switches to pairwise grouping with row length and does not have this property.
"""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def _seq_rowsum(x):
    # sequential (left-to-right) row sum, stable under trailing zero padding
    return np.cumsum(x, axis=1)[:, -1:]


def softmax_rows_fwd(x):
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / _seq_rowsum(e)


def softmax_rows_bwd(y, gy):
    dot = _seq_rowsum(gy * y)
    return y * (gy - dot)


def log_softmax_rows_fwd(x):
    m = np.max(x, axis=1, keepdims=True)
    shifted = x - m
    return shifted - np.log(_seq_rowsum(np.exp(shifted)))


def log_softmax_rows_bwd(logp, gy):
    return gy - np.exp(logp) * _seq_rowsum(gy)


def layer_norm_fwd(x, gain, bias, eps):
    mean = np.mean(x, axis=1, keepdims=True)
    xc = x - mean
    var = np.mean(xc * xc, axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd


def layer_norm_bwd(xhat, rstd, gain, gy):
    gxhat = gy * gain
    m1 = np.mean(gxhat, axis=1, keepdims=True)
    m2 = np.mean(gxhat * xhat, axis=1, keepdims=True)
    gx = (gxhat - m1 - xhat * m2) * rstd
    return gx, np.sum(gy * xhat, axis=0), np.sum(gy, axis=0)


def gelu_fwd(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_bwd(x, gy):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return gy * (cdf + x * pdf)
