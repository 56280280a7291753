"""Finite-difference verification of tape gradients.

Central differences with per-coordinate step refinement: every coordinate
is probed at the base step, and coordinates whose relative error stays
above ``refine_threshold`` are re-probed at 0.1x, 10x, and 100x the step,
keeping the best probe.  Near-zero gradients need the coarser steps
(roundoff in f swamps a small difference), curved coordinates need the fine
one; a genuine backward bug fails at every step, so refinement never hides
one.

Relative error per coordinate is |analytic - numeric| divided by
max(|analytic|, |numeric|, 1e-8); a constant objective scores 0.
"""

import math

import numpy as np

from . import tensor as T
from .errors import NumericError, ParameterError

REFINE_FACTORS = (0.1, 10.0, 100.0)


def _finite(val):
    x = val.item() if isinstance(val, T.Tensor) else float(val)
    if not math.isfinite(x):
        raise NumericError("objective returned a non-finite value at a probe point")
    return x


def _rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def _probe_coord(f, flat, i, a, h, refine_threshold):
    orig = flat[i]
    flat[i] = orig + h
    fp = _finite(f())
    flat[i] = orig - h
    fm = _finite(f())
    flat[i] = orig
    err = _rel_err(a, (fp - fm) / (2.0 * h))
    if err <= refine_threshold:
        return err
    for fac in REFINE_FACTORS:
        hh = h * fac
        flat[i] = orig + hh
        fp = _finite(f())
        flat[i] = orig - hh
        fm = _finite(f())
        flat[i] = orig
        err = min(err, _rel_err(a, (fp - fm) / (2.0 * hh)))
        if err <= refine_threshold:
            break
    return err


def check_gradients(f, theta: T.Tensor, h: float = 1e-4,
                    refine_threshold: float = 1e-5) -> float:
    """Max relative error of tape grads vs central differences.

    ``f`` maps the parameter tensor to a scalar tensor and must reset the
    tape itself if it is called repeatedly elsewhere; here each analytic
    evaluation starts from a fresh tape.
    """
    if h <= 0:
        raise ParameterError("step h must be > 0, got %r" % h)
    theta.grad = None
    T.reset_tape()
    loss = f(theta)
    if not isinstance(loss, T.Tensor) or loss.data.size != 1:
        raise ParameterError("objective must return a scalar tensor")
    _finite(loss)
    T.backward(loss)
    T.reset_tape()
    analytic = (
        theta.grad.reshape(-1).copy()
        if theta.grad is not None
        else np.zeros(theta.data.size)
    )
    flat = theta.data.reshape(-1)
    worst = 0.0
    with T.no_grad():
        T.set_finite_checks(False)
        try:
            for i in range(flat.size):
                err = _probe_coord(lambda: f(theta), flat, i, analytic[i], h,
                                   refine_threshold)
                if err > worst:
                    worst = err
        finally:
            T.set_finite_checks(True)
    return worst


def check_gradients_multi(f, params: dict, h: float = 1e-4,
                          refine_threshold: float = 1e-5):
    """Check a no-argument multi-parameter objective.

    Returns (overall max relative error, per-group report); each report row
    is (group name, max relative error, flat index of the worst coordinate).
    """
    if h <= 0:
        raise ParameterError("step h must be > 0, got %r" % h)
    for p in params.values():
        p.grad = None
    T.reset_tape()
    loss = f()
    if not isinstance(loss, T.Tensor) or loss.data.size != 1:
        raise ParameterError("objective must return a scalar tensor")
    _finite(loss)
    T.backward(loss)
    T.reset_tape()

    report = []
    overall = 0.0
    with T.no_grad():
        T.set_finite_checks(False)
        try:
            for name, p in params.items():
                ga = (
                    p.grad.reshape(-1).copy()
                    if p.grad is not None
                    else np.zeros(p.data.size)
                )
                flat = p.data.reshape(-1)
                worst = 0.0
                worst_i = 0
                for i in range(flat.size):
                    err = _probe_coord(f, flat, i, ga[i], h, refine_threshold)
                    if err > worst:
                        worst = err
                        worst_i = i
                report.append((name, worst, worst_i))
                overall = max(overall, worst)
        finally:
            T.set_finite_checks(True)
    return overall, report
