"""Contrastive distillation of small Transformer encoders on NumPy.

A teacher's logits and per-layer pooled summaries supervise a shallower
student through three weighted terms: the task loss, a softened
distribution-matching loss, and a contrastive loss over projected summary
vectors drawn against stage-specific negatives.  Everything runs in
float64 on a tape-based autodiff core with optional numba kernels
(``CTDISTILL_BACKEND`` selects the backend).
"""

from .bank import MemoryBank, init_bank, retrieve, update
from .bench import BenchResult, bench_inference
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    Batch,
    Dataset,
    Example,
    SyntheticSpec,
    Vocab,
    generate_synthetic,
    iter_batches,
    load_corpus_lines,
    load_tsv_classification,
    pad_batch,
    tokenize,
)
from .diagnostics import GradCheckReport, GradCheckSpec, run_grad_check
from .encoder import EncoderConfig, EncoderOutput, TransformerEncoder
from .errors import (
    BoundsError,
    ConfigError,
    CtdistillError,
    DegenerateVectorError,
    DimensionError,
    InputError,
    NumericError,
    ParameterError,
    SamplingError,
    ShapeError,
    StateError,
)
from .gradcheck import check_gradients, check_gradients_multi
from .losses import (
    LossWeights,
    ProjectionHead,
    ce_loss,
    combined_loss,
    crd_loss,
    kd_loss,
    mlm_loss,
    project,
    summarize,
)
from .sampling import (
    MaskingPlan,
    NegativePlan,
    make_masking_plan,
    sample_negatives_finetune,
    sample_negatives_pretrain,
)
from .train import (
    EvalResult,
    RunRecord,
    StepRecord,
    TrainConfig,
    TrainResult,
    evaluate,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BenchResult",
    "Batch",
    "BoundsError",
    "Checkpoint",
    "ConfigError",
    "CtdistillError",
    "Dataset",
    "DegenerateVectorError",
    "DimensionError",
    "EncoderConfig",
    "EncoderOutput",
    "EvalResult",
    "Example",
    "GradCheckReport",
    "GradCheckSpec",
    "InputError",
    "LossWeights",
    "MaskingPlan",
    "MemoryBank",
    "NegativePlan",
    "NumericError",
    "ParameterError",
    "ProjectionHead",
    "RunRecord",
    "SamplingError",
    "ShapeError",
    "StateError",
    "StepRecord",
    "SyntheticSpec",
    "TrainConfig",
    "TrainResult",
    "TransformerEncoder",
    "Vocab",
    "bench_inference",
    "check_gradients",
    "check_gradients_multi",
    "ce_loss",
    "combined_loss",
    "crd_loss",
    "evaluate",
    "generate_synthetic",
    "init_bank",
    "iter_batches",
    "kd_loss",
    "load_checkpoint",
    "load_corpus_lines",
    "load_tsv_classification",
    "make_masking_plan",
    "mlm_loss",
    "pad_batch",
    "project",
    "retrieve",
    "run_grad_check",
    "sample_negatives_finetune",
    "sample_negatives_pretrain",
    "save_checkpoint",
    "summarize",
    "tokenize",
    "train",
    "update",
]
