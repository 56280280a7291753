"""Whole-objective gradient verification on a small teacher/student pair.

Builds a random instance of the combined objective (task + softened KL +
contrastive term), runs the tape backward once, then compares every
trainable coordinate against central finite differences.  The teacher
forward is precomputed as constants: it is frozen, so only its projection
head participates in differentiation.
"""

import time
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from . import tensor as T
from .bank import init_bank, retrieve
from .encoder import EncoderConfig, TransformerEncoder, forward
from .gradcheck import check_gradients_multi
from .losses import (
    LossWeights,
    ProjectionHead,
    ce_loss,
    crd_loss,
    kd_loss,
    project,
    summarize,
)
from .sampling import sample_negatives_finetune


@dataclass
class GradCheckSpec:
    teacher_layers: int = 4
    student_layers: int = 2
    hidden_dim: int = 32
    num_heads: int = 4
    ffn_dim: int = 32
    vocab_size: int = 16
    max_len: int = 8
    num_classes: int = 2
    batch_size: int = 4
    K: int = 8
    proj_dim: int = 16
    alpha1: float = 0.7
    alpha2: float = 0.5
    rho: float = 2.0
    tau: float = 0.07
    seed: int = 0
    h: float = 1e-4


@dataclass
class GradCheckReport:
    max_rel_err: float
    groups: list  # (name, max rel err, worst flat index)
    seconds: float
    num_coords: int


def run_grad_check(spec: GradCheckSpec = None) -> GradCheckReport:
    spec = spec or GradCheckSpec()
    enc = dict(hidden_dim=spec.hidden_dim, num_heads=spec.num_heads,
               ffn_dim=spec.ffn_dim, vocab_size=spec.vocab_size,
               max_len=spec.max_len, num_classes=spec.num_classes,
               dropout_rate=0.0)
    teacher = TransformerEncoder(
        EncoderConfig(num_layers=spec.teacher_layers, **enc), seed=spec.seed + 1)
    student = TransformerEncoder(
        EncoderConfig(num_layers=spec.student_layers, **enc), seed=spec.seed + 2)
    teacher.set_trainable(False)

    rng = np.random.default_rng(spec.seed)
    B, L = spec.batch_size, spec.max_len
    ids = rng.integers(5, spec.vocab_size, size=(B, L))
    ids[:, 0] = 2  # sentences start with the sequence marker
    valid_lens = rng.integers(max(2, L // 2), L + 1, size=B)
    for b in range(B):
        ids[b, valid_lens[b]:] = 0
    batch = SimpleNamespace(ids=ids, valid_lens=valid_lens)
    labels = np.arange(B) % spec.num_classes
    rng.shuffle(labels)

    w = LossWeights(alpha1=spec.alpha1, alpha2=spec.alpha2, rho=spec.rho,
                    tau=spec.tau)
    phi_s = ProjectionHead(spec.student_layers * spec.hidden_dim,
                           spec.proj_dim, seed=spec.seed + 3)
    phi_t = ProjectionHead(spec.teacher_layers * spec.hidden_dim,
                           spec.proj_dim, seed=spec.seed + 4)
    bank = init_bank(max(2 * B, 16), spec.proj_dim, seed=spec.seed + 5)

    # the teacher is frozen: run it once and keep plain arrays
    with T.no_grad():
        t_out = forward(teacher, batch)
        t_logits = t_out.logits.data.copy()
        t_summary = summarize(t_out, "mean_pool").data.copy()

    # negatives fixed up front so every probe sees the same instance
    bank_labels = np.arange(bank.N) % spec.num_classes
    plans = [
        sample_negatives_finetune(bank_labels, b, spec.K, rng)
        for b in range(B)
    ]
    negatives = [retrieve(bank, p.negative_indices.tolist()) for p in plans]

    def objective():
        out = forward(student, batch)
        task = ce_loss(out.logits, labels)
        kd = kd_loss(t_logits, out.logits, w.rho)
        h_s = project(phi_s, summarize(out, "mean_pool"))
        h_t = project(phi_t, T.Tensor(t_summary))
        terms = [
            crd_loss(T.row_select(h_t, b), T.row_select(h_s, b),
                     negatives[b], w.tau)
            for b in range(B)
        ]
        crd = T.scale(T.sum_all(T.stack_scalars(terms)), 1.0 / B)
        total = T.add(task, T.add(T.scale(kd, w.alpha1),
                                  T.scale(crd, w.alpha2)))
        return total

    params = dict(student.params)
    params["phi_s.weight"] = phi_s.weight
    params["phi_t.weight"] = phi_t.weight

    t0 = time.perf_counter()
    overall, groups = check_gradients_multi(objective, params, h=spec.h)
    seconds = time.perf_counter() - t0
    return GradCheckReport(
        max_rel_err=overall,
        groups=groups,
        seconds=seconds,
        num_coords=sum(p.data.size for p in params.values()),
    )


def frozen_teacher_grads_are_zero(spec: GradCheckSpec = None) -> bool:
    """Backward of the full objective must leave teacher grads untouched."""
    spec = spec or GradCheckSpec()
    enc = dict(hidden_dim=spec.hidden_dim, num_heads=spec.num_heads,
               ffn_dim=spec.ffn_dim, vocab_size=spec.vocab_size,
               max_len=spec.max_len, num_classes=spec.num_classes,
               dropout_rate=0.0)
    teacher = TransformerEncoder(
        EncoderConfig(num_layers=spec.teacher_layers, **enc), seed=spec.seed + 1)
    student = TransformerEncoder(
        EncoderConfig(num_layers=spec.student_layers, **enc), seed=spec.seed + 2)
    teacher.set_trainable(False)
    rng = np.random.default_rng(spec.seed)
    B, L = spec.batch_size, spec.max_len
    ids = rng.integers(5, spec.vocab_size, size=(B, L))
    ids[:, 0] = 2
    batch = SimpleNamespace(ids=ids, valid_lens=np.full(B, L))
    labels = np.arange(B) % spec.num_classes

    T.reset_tape()
    t_out = forward(teacher, batch)  # no no_grad: freeze must hold anyway
    s_out = forward(student, batch)
    kd = kd_loss(t_out.logits.data, s_out.logits, spec.rho)
    total = T.add(ce_loss(s_out.logits, labels), T.scale(kd, spec.alpha1))
    T.backward(total)
    T.reset_tape()
    return all(p.grad is None for p in teacher.params.values())
