"""Stage orchestration: the training loop, evaluation, and run records.

One loop serves all five stages; the stage plus the loss weights decide
which terms are computed.  A term with weight zero is skipped outright, so
a contrastive-stage run with both extra weights at zero takes literally the
same code path, rng draws included, as the plain stage, and their loss
curves match bitwise.

Random streams are split per purpose (init, batch order, dropout, negative
sampling, masking, bank) so that enabling one consumer never shifts the
draws seen by another.
"""

import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .bank import MemoryBank, init_bank, retrieve, update
from .data import (
    Batch,
    Dataset,
    MASK,
    NUM_RESERVED,
    _open_write,
    iter_batches,
    pad_batch,
)
from .encoder import EncoderConfig, TransformerEncoder, forward
from .errors import ConfigError, InputError, NumericError, SamplingError
from .losses import (
    LossWeights,
    ProjectionHead,
    ce_loss,
    crd_loss,
    kd_loss,
    mlm_loss,
    project,
    summarize,
)
from .optim import Adam, clip_global_norm, warmup_linear
from .sampling import (
    make_masking_plan,
    sample_negatives_finetune,
    sample_negatives_pretrain,
)

STAGES = (
    "pretrain_mlm",
    "pretrain_codir",
    "finetune_standard",
    "finetune_kd",
    "finetune_codir",
)
KD_STAGES = ("pretrain_codir", "finetune_kd", "finetune_codir")
CRD_STAGES = ("pretrain_codir", "finetune_codir")


@dataclass
class TrainConfig:
    stage: str
    encoder: EncoderConfig
    weights: LossWeights = field(default_factory=LossWeights)
    total_steps: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    warmup_frac: float = 0.06
    clip_norm: float = 1.0
    K: int = 0
    bank_beta: float = 0.5
    proj_dim: int = 16
    summary_mode: str = "mean_pool"
    mask_rate: float = 0.15
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError("unknown stage %r (pick from %s)" % (self.stage, STAGES))
        if self.total_steps < 0 or self.batch_size < 1:
            raise ConfigError("total_steps must be >= 0 and batch_size >= 1")
        if self.K < 0:
            raise ConfigError("K must be >= 0")
        if self.K > 0 and self.stage not in CRD_STAGES:
            raise ConfigError("K applies only to contrastive stages, not %s" % self.stage)
        if self.weights.alpha1 > 0 and self.stage not in KD_STAGES:
            raise ConfigError("alpha1 > 0 needs a distillation stage, not %s" % self.stage)
        if self.weights.alpha2 > 0 and self.stage not in CRD_STAGES:
            raise ConfigError("alpha2 > 0 needs a contrastive stage, not %s" % self.stage)
        if self.summary_mode not in ("mean_pool", "cls"):
            raise ConfigError("summary_mode must be mean_pool or cls")
        if self.proj_dim < 1:
            raise ConfigError("proj_dim must be >= 1")
        expected_head = "mlm" if self.stage.startswith("pretrain") else "classification"
        if self.encoder.head != expected_head:
            raise ConfigError(
                "stage %s needs encoder head %r, got %r"
                % (self.stage, expected_head, self.encoder.head)
            )


@dataclass
class StepRecord:
    step: int
    task_loss: float
    kd_loss: float
    crd_loss: float
    total: float
    lr: float
    wall_ms: float


@dataclass
class RunRecord:
    stage: str
    rows: list = field(default_factory=list)
    eval_accuracy: float = None
    crd_skipped: int = 0
    final: dict = field(default_factory=dict)

    CSV_HEADER = "step,task_loss,kd_loss,crd_loss,total,lr,wall_ms"

    def to_csv(self, path) -> None:
        with _open_write(path) as fh:
            fh.write(self.CSV_HEADER + "\n")
            for r in self.rows:
                fh.write(
                    "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n"
                    % (r.step, r.task_loss, r.kd_loss, r.crd_loss, r.total,
                       r.lr, r.wall_ms)
                )

    def loss_curve(self) -> np.ndarray:
        """(steps, 4) array of task/kd/crd/total columns."""
        return np.array(
            [[r.task_loss, r.kd_loss, r.crd_loss, r.total] for r in self.rows]
        )


@dataclass
class TrainResult:
    model: TransformerEncoder
    record: RunRecord
    phi_s: ProjectionHead = None
    phi_t: ProjectionHead = None
    bank: MemoryBank = None


def _seed_int(seq) -> int:
    return int(seq.generate_state(1)[0])


def _epoch_batches(dataset, batch_size, rng, shuffle):
    while True:
        yield from iter_batches(dataset, batch_size, rng=rng, shuffle=shuffle)


def _mask_batch(batch: Batch, mask_rate, rng) -> Batch:
    """Fresh masked copy of a batch; special tokens and padding stay put."""
    ids = batch.ids.copy()
    rows, cols, targets = [], [], []
    for r in range(batch.size):
        vl = int(batch.valid_lens[r])
        row = batch.ids[r, :vl]
        maskable = row >= NUM_RESERVED
        masked, plan = make_masking_plan(row, maskable, MASK, rng,
                                         mask_rate=mask_rate)
        ids[r, :vl] = masked
        rows.extend([r] * plan.masked_positions.size)
        cols.extend(plan.masked_positions.tolist())
        targets.extend(plan.original_ids.tolist())
    return Batch(
        ids=ids,
        valid_lens=batch.valid_lens,
        indices=batch.indices,
        labels=batch.labels,
        mask_rows=np.asarray(rows, dtype=np.int64),
        mask_cols=np.asarray(cols, dtype=np.int64),
        mask_targets=np.asarray(targets, dtype=np.int64),
    )


def _teacher_cache(teacher, dataset, summary_mode, need_summary, batch_size=64):
    """Eval-mode teacher logits (and layer summaries) per dataset index.

    Finetuning inputs never change, so one pass covers every epoch.
    """
    N = len(dataset)
    logits = None
    summaries = None
    with T.no_grad():
        for start in range(0, N, batch_size):
            chunk = pad_batch(dataset.examples[start : start + batch_size])
            out = forward(teacher, chunk, retain_hidden=need_summary)
            if logits is None:
                logits = np.empty((N, out.logits.data.shape[1]))
            logits[chunk.indices] = out.logits.data
            if need_summary:
                s = summarize(out, summary_mode)
                if summaries is None:
                    summaries = np.empty((N, s.data.shape[1]))
                summaries[chunk.indices] = s.data
    return logits, summaries


def train(config: TrainConfig, dataset: Dataset, teacher=None,
          init_arrays=None, eval_dataset=None) -> TrainResult:
    """Run one training stage and return the model plus its run record.

    ``teacher`` is required for distillation stages and always runs in eval
    mode.  ``init_arrays`` (name -> array) warm-starts every parameter
    whose name and shape match, which is how a pretrained trunk enters a
    finetuning stage with a fresh head.
    """
    stage = config.stage
    is_pretrain = stage.startswith("pretrain")
    kd_on = stage in KD_STAGES and config.weights.alpha1 > 0
    crd_on = stage in CRD_STAGES and config.weights.alpha2 > 0 and config.K > 0
    needs_teacher = stage in KD_STAGES
    if needs_teacher and teacher is None:
        raise ConfigError("stage %s needs a teacher model" % stage)
    if len(dataset) == 0:
        raise InputError("cannot train on an empty dataset")
    if not is_pretrain and dataset.num_classes != config.encoder.num_classes:
        raise ConfigError(
            "dataset has %d classes but encoder expects %d"
            % (dataset.num_classes, config.encoder.num_classes)
        )

    root = np.random.SeedSequence(config.seed)
    (ss_init, ss_data, ss_drop, ss_sample, ss_mask, ss_bank,
     ss_heads) = root.spawn(7)
    data_rng = np.random.default_rng(ss_data)
    drop_rng = np.random.default_rng(ss_drop)
    sample_rng = np.random.default_rng(ss_sample)
    mask_rng = np.random.default_rng(ss_mask)

    model = TransformerEncoder(config.encoder, seed=_seed_int(ss_init))
    if init_arrays is not None:
        adopted = adopt_arrays(model, init_arrays)
        if adopted == 0:
            raise ConfigError("initialization checkpoint matched no parameters")

    if teacher is not None:
        teacher.set_trainable(False)
        if (kd_on and not is_pretrain
                and teacher.config.num_classes != config.encoder.num_classes):
            raise ConfigError("teacher and student class counts differ")
        if kd_on and is_pretrain and teacher.config.vocab_size != config.encoder.vocab_size:
            raise ConfigError("teacher and student vocab sizes differ")

    trainable = dict(model.params)
    phi_s = phi_t = None
    bank = None
    labels_all = dataset.labels if not is_pretrain else None
    if crd_on:
        head_seed = _seed_int(ss_heads)
        phi_s = ProjectionHead(
            config.encoder.num_layers * config.encoder.hidden_dim,
            config.proj_dim, seed=head_seed)
        phi_t = ProjectionHead(
            teacher.config.num_layers * teacher.config.hidden_dim,
            config.proj_dim, seed=head_seed + 1)
        trainable["phi_s.weight"] = phi_s.weight
        trainable["phi_t.weight"] = phi_t.weight
        bank = init_bank(len(dataset), config.proj_dim,
                         seed=_seed_int(ss_bank), beta=config.bank_beta)

    t_logits_cache = t_summary_cache = None
    if (kd_on or crd_on) and not is_pretrain:
        t_logits_cache, t_summary_cache = _teacher_cache(
            teacher, dataset, config.summary_mode, need_summary=crd_on)

    opt = Adam(trainable)
    record = RunRecord(stage=stage)
    batches = _epoch_batches(dataset, config.batch_size, data_rng,
                             config.shuffle)
    training_dropout = config.encoder.dropout_rate > 0.0

    for step in range(config.total_steps):
        t0 = time.perf_counter()
        batch = next(batches)
        if is_pretrain:
            batch = _mask_batch(batch, config.mask_rate, mask_rng)
        lr = warmup_linear(step, config.total_steps, config.lr,
                           config.warmup_frac)

        T.reset_tape()
        out = forward(model, batch, training=True,
                      rng=drop_rng if training_dropout else None,
                      retain_hidden=crd_on)

        if is_pretrain:
            task = mlm_loss(out.logits, batch.mask_rows, batch.mask_cols,
                            batch.mask_targets)
        else:
            task = ce_loss(out.logits, batch.labels)

        t_out = None
        if (kd_on or crd_on) and is_pretrain:
            with T.no_grad():
                t_out = forward(teacher, batch, retain_hidden=crd_on)

        kd_val = 0.0
        total = task
        if kd_on:
            if is_pretrain:
                t_sel = t_out.logits.data[batch.mask_rows, batch.mask_cols, :]
                s_sel = T.select_positions(out.logits, batch.mask_rows,
                                           batch.mask_cols)
                kd = kd_loss(t_sel, s_sel, config.weights.rho)
            else:
                kd = kd_loss(t_logits_cache[batch.indices], out.logits,
                             config.weights.rho)
            kd_val = kd.item()
            total = T.add(total, T.scale(kd, config.weights.alpha1))

        crd_val = 0.0
        if crd_on:
            s_summary = summarize(out, config.summary_mode)
            h_s = project(phi_s, s_summary)
            if is_pretrain:
                t_summary = summarize(t_out, config.summary_mode).data
            else:
                t_summary = t_summary_cache[batch.indices]
            h_t = project(phi_t, T.Tensor(t_summary))
            terms = []
            for b in range(batch.size):
                try:
                    if is_pretrain:
                        plan = sample_negatives_pretrain(
                            batch.indices, b, config.K, sample_rng)
                    else:
                        plan = sample_negatives_finetune(
                            labels_all, int(batch.indices[b]), config.K,
                            sample_rng)
                except SamplingError:
                    record.crd_skipped += 1
                    continue
                negs = retrieve(bank, plan.negative_indices.tolist())
                terms.append(crd_loss(T.row_select(h_t, b),
                                      T.row_select(h_s, b),
                                      negs, config.weights.tau))
            if terms:
                crd = T.scale(T.sum_all(T.stack_scalars(terms)),
                              1.0 / len(terms))
                crd_val = crd.item()
                total = T.add(total, T.scale(crd, config.weights.alpha2))

        total_val = total.item()
        if not math.isfinite(total_val):
            raise NumericError("non-finite loss at step %d" % step)

        T.backward(total)
        clip_global_norm(trainable, config.clip_norm)
        opt.step(lr)
        opt.zero_grads()
        T.reset_tape()

        if crd_on:
            for b in range(batch.size):
                update(bank, int(batch.indices[b]), h_s.data[b])

        record.rows.append(StepRecord(
            step=step,
            task_loss=task.item(),
            kd_loss=kd_val,
            crd_loss=crd_val,
            total=total_val,
            lr=lr,
            wall_ms=(time.perf_counter() - t0) * 1e3,
        ))

    if eval_dataset is not None and not is_pretrain:
        res = evaluate(model, eval_dataset)
        record.eval_accuracy = res.accuracy
        record.final["eval_accuracy"] = res.accuracy
    record.final["steps"] = config.total_steps
    record.final["crd_skipped"] = record.crd_skipped
    return TrainResult(model=model, record=record, phi_s=phi_s, phi_t=phi_t,
                       bank=bank)


def adopt_arrays(model: TransformerEncoder, arrays: dict) -> int:
    """Copy arrays into same-name, same-shape parameters; returns matches.

    The head of an MLM-pretrained trunk has a different shape than a
    classification head and is left at its fresh initialization.
    """
    matched = 0
    for name, tensor in model.params.items():
        if name in arrays and np.shape(arrays[name]) == tensor.data.shape:
            tensor.data = np.asarray(arrays[name], dtype=np.float64).copy()
            matched += 1
    return matched


@dataclass
class EvalResult:
    accuracy: float
    per_class_correct: np.ndarray
    per_class_total: np.ndarray


def evaluate(model: TransformerEncoder, dataset: Dataset,
             batch_size: int = 64) -> EvalResult:
    """Deterministic eval-mode accuracy with per-class tallies."""
    if len(dataset) == 0:
        raise InputError("cannot evaluate on an empty dataset")
    k = model.config.num_classes
    if dataset.num_classes > k:
        raise ConfigError(
            "dataset has %d classes but model predicts %d"
            % (dataset.num_classes, k)
        )
    correct = np.zeros(k, dtype=np.int64)
    total = np.zeros(k, dtype=np.int64)
    with T.no_grad():
        for start in range(0, len(dataset), batch_size):
            chunk = pad_batch(dataset.examples[start : start + batch_size])
            out = forward(model, chunk, retain_hidden=False)
            pred = np.argmax(out.logits.data, axis=1)
            for y, p in zip(chunk.labels, pred):
                total[y] += 1
                if y == p:
                    correct[y] += 1
    return EvalResult(
        accuracy=float(correct.sum()) / float(total.sum()),
        per_class_correct=correct,
        per_class_total=total,
    )
