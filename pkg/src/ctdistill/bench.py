"""Inference wall-clock comparison between two encoders.

Median-of-reps forward time on the same random batch, eval mode, hidden
states not retained.  CTDISTILL_NUM_THREADS, when set, pins the BLAS
thread pools for the duration of the benchmark (and only then; training
and tests run with whatever the environment provides).
"""

import os
import time
from contextlib import nullcontext
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from . import tensor as T
from .encoder import TransformerEncoder, forward
from .errors import ConfigError, ParameterError


@dataclass
class BenchResult:
    teacher_median_s: float
    student_median_s: float
    speedup: float
    reps: int
    batch_size: int
    seq_len: int
    threads: int  # 0 means "not pinned"


def _thread_limit():
    raw = os.environ.get("CTDISTILL_NUM_THREADS", "").strip()
    if not raw:
        return 0, nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("CTDISTILL_NUM_THREADS must be an integer, got %r" % raw)
    if n < 1:
        raise ConfigError("CTDISTILL_NUM_THREADS must be >= 1, got %d" % n)
    import threadpoolctl

    return n, threadpoolctl.threadpool_limits(limits=n)


def _time_forward(model, batch, reps):
    times = []
    with T.no_grad():
        for _ in range(2):  # warmup
            forward(model, batch, retain_hidden=False)
        for _ in range(reps):
            t0 = time.perf_counter()
            forward(model, batch, retain_hidden=False)
            times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_inference(teacher: TransformerEncoder, student: TransformerEncoder,
                    batch_size: int = 32, seq_len: int = 128, reps: int = 5,
                    seed: int = 0) -> BenchResult:
    if reps < 3:
        raise ParameterError("reps must be >= 3, got %d" % reps)
    for name, model in (("teacher", teacher), ("student", student)):
        if seq_len > model.config.max_len:
            raise ParameterError(
                "%s max_len %d is below the benchmark length %d"
                % (name, model.config.max_len, seq_len)
            )
    vocab = min(teacher.config.vocab_size, student.config.vocab_size)
    rng = np.random.default_rng(seed)
    ids = rng.integers(5, vocab, size=(batch_size, seq_len))
    ids[:, 0] = 2
    batch = SimpleNamespace(ids=ids,
                            valid_lens=np.full(batch_size, seq_len))
    threads, limiter = _thread_limit()
    with limiter:
        t_med = _time_forward(teacher, batch, reps)
        s_med = _time_forward(student, batch, reps)
    return BenchResult(
        teacher_median_s=t_med,
        student_median_s=s_med,
        speedup=t_med / s_med,
        reps=reps,
        batch_size=batch_size,
        seq_len=seq_len,
        threads=threads,
    )
