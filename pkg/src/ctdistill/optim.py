"""Adam with linear warmup/decay scheduling and global-norm clipping."""

import numpy as np

from .errors import ParameterError


class Adam:
    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if not (0.0 <= beta1 < 1.0) or not (0.0 <= beta2 < 1.0):
            raise ParameterError("Adam betas must be in [0,1)")
        if eps <= 0:
            raise ParameterError("Adam eps must be > 0")
        self.params = dict(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def warmup_linear(step: int, total_steps: int, base_lr: float,
                  warmup_frac: float = 0.06) -> float:
    """Linear climb over the warmup span, then linear decay to zero."""
    if total_steps < 1:
        raise ParameterError("total_steps must be >= 1")
    if not (0.0 <= warmup_frac < 1.0):
        raise ParameterError("warmup_frac must be in [0,1)")
    warmup = max(1, int(round(warmup_frac * total_steps)))
    if step < warmup:
        return base_lr * (step + 1) / warmup
    if total_steps == warmup:
        return base_lr
    frac = (total_steps - step) / (total_steps - warmup)
    return base_lr * max(0.0, frac)


def clip_global_norm(params: dict, max_norm: float) -> float:
    """Scale all grads so their joint norm is at most max_norm; returns the
    pre-clip norm."""
    if max_norm <= 0:
        raise ParameterError("max_norm must be > 0")
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(sq))
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm
