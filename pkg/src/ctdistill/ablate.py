"""Ablation harness: layer-summary mode toggle and negative-count sweep.

Trains one teacher on a synthetic classification task, then one student
per (summary mode, K) setting with the full objective, and writes one CSV
row per setting.  No ordering between settings is asserted anywhere; the
harness exists to make the comparison reproducible with one command.
"""

import csv
from dataclasses import dataclass

from .data import Dataset, Example, SyntheticSpec, generate_synthetic
from .encoder import EncoderConfig
from .losses import LossWeights
from .train import TrainConfig, evaluate, train

CSV_HEADER = ("summary_mode", "K", "dev_accuracy")


@dataclass
class AblationSettings:
    n: int = 600
    dev_frac: float = 0.2
    teacher_layers: int = 4
    student_layers: int = 2
    hidden_dim: int = 32
    num_heads: int = 4
    teacher_steps: int = 700
    student_steps: int = 350
    batch_size: int = 16
    lr: float = 2e-3
    alpha1: float = 0.7
    alpha2: float = 0.5
    rho: float = 2.0
    tau: float = 0.07
    proj_dim: int = 16
    seed: int = 0
    modes: tuple = ("mean_pool", "cls")
    k_values: tuple = (8, 32, 128)


def split_dataset(dataset: Dataset, n_train: int):
    """Head/tail split with indices rebased per side."""
    def rebase(examples):
        return [Example(e.ids.copy(), e.label, i) for i, e in enumerate(examples)]

    train_part = Dataset(rebase(dataset.examples[:n_train]),
                         num_classes=dataset.num_classes)
    dev_part = Dataset(rebase(dataset.examples[n_train:]),
                       num_classes=dataset.num_classes)
    return train_part, dev_part


def run_ablation(out_csv, settings: AblationSettings = None):
    """Returns (teacher dev accuracy, list of (mode, K, accuracy)) and
    writes the CSV."""
    s = settings or AblationSettings()
    spec = SyntheticSpec(kind="classification")
    full, vocab = generate_synthetic(spec, s.n, seed=s.seed)
    n_dev = max(1, int(round(s.dev_frac * s.n)))
    train_set, dev_set = split_dataset(full, s.n - n_dev)

    enc_common = dict(hidden_dim=s.hidden_dim, num_heads=s.num_heads,
                      vocab_size=len(vocab), max_len=spec.max_len + 2,
                      num_classes=full.num_classes, dropout_rate=0.1)
    teacher_cfg = TrainConfig(
        stage="finetune_standard",
        encoder=EncoderConfig(num_layers=s.teacher_layers, **enc_common),
        total_steps=s.teacher_steps, batch_size=s.batch_size, lr=s.lr,
        seed=s.seed + 1,
    )
    teacher_run = train(teacher_cfg, train_set, eval_dataset=dev_set)
    teacher_acc = teacher_run.record.eval_accuracy

    rows = []
    for mode in s.modes:
        for K in s.k_values:
            cfg = TrainConfig(
                stage="finetune_codir",
                encoder=EncoderConfig(num_layers=s.student_layers, **enc_common),
                weights=LossWeights(alpha1=s.alpha1, alpha2=s.alpha2,
                                    rho=s.rho, tau=s.tau),
                total_steps=s.student_steps, batch_size=s.batch_size,
                lr=s.lr, K=K, proj_dim=s.proj_dim, summary_mode=mode,
                seed=s.seed + 2,
            )
            result = train(cfg, train_set, teacher=teacher_run.model,
                           eval_dataset=dev_set)
            rows.append((mode, K, result.record.eval_accuracy))

    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for mode, K, acc in rows:
            writer.writerow([mode, K, "%.6f" % acc])
    return teacher_acc, rows
