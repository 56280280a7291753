"""Training objective: task loss, softened-KL distillation, and the
contrastive term over projected layer summaries, plus their weighted sum.

The teacher side of the KL term is computed with the same low-level kernel
the tape op uses, so distilling a model against its own logits yields an
exact zero rather than rounding dust.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor as T
from .errors import (
    DimensionError,
    InputError,
    ParameterError,
    StateError,
)

SUMMARY_MODES = ("mean_pool", "cls")


@dataclass
class LossWeights:
    alpha1: float = 0.0  # weight of the softened-KL term
    alpha2: float = 0.0  # weight of the contrastive term
    rho: float = 2.0  # KL softening temperature
    tau: float = 0.07  # contrastive temperature

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "rho", "tau"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ParameterError("%s must be finite, got %r" % (name, v))
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ParameterError("alpha1/alpha2 must be >= 0")
        if self.rho <= 0:
            raise ParameterError("rho must be > 0, got %r" % self.rho)
        if self.tau <= 0:
            raise ParameterError("tau must be > 0, got %r" % self.tau)


class ProjectionHead:
    """Bias-free linear map from concatenated layer summaries to dim m."""

    def __init__(self, in_dim: int, out_dim: int, seed: int = 0):
        if in_dim < 1 or out_dim < 1:
            raise ParameterError(
                "projection dims must be >= 1, got %d -> %d" % (in_dim, out_dim)
            )
        self.in_dim = in_dim
        self.out_dim = out_dim
        rng = np.random.default_rng(seed)
        w = rng.normal(0.0, 0.02, size=(in_dim, out_dim))
        self.weight = T.Tensor(w, requires_grad=True)

    def parameters(self) -> dict:
        return {"weight": self.weight}


def summarize(output, mode: str) -> T.Tensor:
    """Pool each hidden layer to a d-vector and concatenate layers in order.

    mean_pool averages over valid tokens; cls takes the position-0 state.
    """
    if mode not in SUMMARY_MODES:
        raise ParameterError("summarize mode must be one of %s" % (SUMMARY_MODES,))
    if not output.hidden:
        raise StateError("encoder output has no retained hidden states")
    parts = []
    for H in output.hidden:
        if mode == "cls":
            parts.append(T.select_pos(H, 0))
        else:
            parts.append(T.mean_pool_batch(H, output.valid_lens))
    return parts[0] if len(parts) == 1 else T.concat_last(parts)


def project(head: ProjectionHead, summary: T.Tensor) -> T.Tensor:
    if summary.data.ndim != 2 or summary.data.shape[1] != head.in_dim:
        raise DimensionError(
            "projection expects (batch, %d), got %s"
            % (head.in_dim, summary.data.shape)
        )
    return T.matmul(summary, head.weight)


def _soften(z, rho):
    # mirror log_softmax_rows' temperature branch so the bitwise path of
    # teacher and student sides is identical
    return z if rho == 1.0 else z / rho


def kd_loss(z_t, z_s: T.Tensor, rho: float) -> T.Tensor:
    """Row-mean KL(teacher softened || student softened).

    z_t may be a Tensor or a plain array; either way it is treated as a
    constant, so no gradient reaches the teacher.
    """
    if rho <= 0:
        raise ParameterError("rho must be > 0, got %r" % rho)
    zt = z_t.data if isinstance(z_t, T.Tensor) else np.asarray(z_t, dtype=np.float64)
    if zt.shape != z_s.data.shape or z_s.data.ndim != 2:
        raise DimensionError(
            "kd_loss needs equal 2D shapes, got %s vs %s" % (zt.shape, z_s.data.shape)
        )
    logp_t = kernels.log_softmax_rows_fwd(np.ascontiguousarray(_soften(zt, rho)))
    p_t = np.exp(logp_t)
    logp_s = T.log_softmax_rows(z_s, temperature=rho)
    gap = T.add_const(logp_s, -logp_t)  # log p_s - log p_t, zero when equal
    elem = T.mul_const(gap, -p_t)
    return T.scale(T.sum_all(elem), 1.0 / zt.shape[0])


def crd_loss(h_t0: T.Tensor, h_s0: T.Tensor, negatives, tau: float) -> T.Tensor:
    """InfoNCE over cosine similarities against the teacher anchor.

    Slot 0 holds the congruent (same example) pair; the K negatives are
    treated as constants.  K = 0 gives exactly zero.
    """
    if tau <= 0:
        raise ParameterError("tau must be > 0, got %r" % tau)
    sims = [T.cosine_sim(h_t0, h_s0)]
    for neg in negatives:
        nt = neg if isinstance(neg, T.Tensor) else T.Tensor(np.asarray(neg))
        if nt.requires_grad:
            nt = nt.detach()
        sims.append(T.cosine_sim(h_t0, nt))
    stacked = T.stack_scalars(sims)
    logp = T.log_softmax_rows(stacked, temperature=tau)
    return T.neg(T.take_index(logp, 0))


def ce_loss(z_s: T.Tensor, labels) -> T.Tensor:
    """Mean cross-entropy of 2D logits against integer labels."""
    y = np.asarray(labels)
    if z_s.data.ndim != 2 or y.ndim != 1 or y.shape[0] != z_s.data.shape[0]:
        raise DimensionError(
            "ce_loss needs (B,k) logits and B labels, got %s and %s"
            % (z_s.data.shape, y.shape)
        )
    if y.size == 0:
        raise InputError("ce_loss on an empty batch")
    if y.min() < 0 or y.max() >= z_s.data.shape[1]:
        raise InputError("label out of range [0, %d)" % z_s.data.shape[1])
    logp = T.log_softmax_rows(z_s)
    picked = T.take_per_row(logp, y)
    return T.scale(T.sum_all(picked), -1.0 / y.shape[0])


def mlm_loss(logits: T.Tensor, rows, cols, targets) -> T.Tensor:
    """Mean NLL at masked positions only.

    logits is the per-position (B,L,V) tensor; rows/cols index the masked
    positions and targets holds the original token ids there.
    """
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    tgt = np.asarray(targets)
    if logits.data.ndim != 3:
        raise DimensionError(
            "mlm_loss needs (B,L,V) logits, got %s" % (logits.data.shape,)
        )
    if not (rows.shape == cols.shape == tgt.shape) or rows.ndim != 1:
        raise DimensionError("rows/cols/targets must be equal-length 1D")
    if rows.size == 0:
        raise InputError("mlm_loss with no masked positions")
    sel = T.select_positions(logits, rows, cols)
    logp = T.log_softmax_rows(sel)
    picked = T.take_per_row(logp, tgt)
    return T.scale(T.sum_all(picked), -1.0 / rows.shape[0])


def combined_loss(task: T.Tensor, kd: T.Tensor, crd: T.Tensor,
                  w: LossWeights) -> T.Tensor:
    """task + alpha1 * kd + alpha2 * crd."""
    return T.add(task, T.add(T.scale(kd, w.alpha1), T.scale(crd, w.alpha2)))
