"""Fixed-capacity store of per-example student projections.

Rows move toward fresh projections by exponential moving average, so K
negatives per step cost K row reads instead of K extra forward passes.
Read/write counters exist purely so tests can assert that cost model.
"""

import numpy as np

from . import tensor as T
from .errors import BoundsError, NumericError, ParameterError


class MemoryBank:
    def __init__(self, M: np.ndarray, beta: float):
        if not (0.0 < beta < 1.0):
            raise ParameterError("beta must be in (0,1), got %r" % beta)
        self.M = M
        self.beta = float(beta)
        self.reads = 0
        self.writes = 0

    @property
    def N(self) -> int:
        return self.M.shape[0]

    @property
    def m(self) -> int:
        return self.M.shape[1]

    def reset_counters(self) -> None:
        self.reads = 0
        self.writes = 0

    def state_arrays(self) -> dict:
        return {"M": self.M, "beta": np.asarray(self.beta)}

    @classmethod
    def from_state(cls, arrays: dict) -> "MemoryBank":
        return cls(np.asarray(arrays["M"], dtype=np.float64).copy(),
                   float(arrays["beta"]))


def init_bank(N: int, m: int, seed: int, beta: float = 0.5) -> MemoryBank:
    """Bank of N i.i.d. random unit-norm rows; deterministic under seed."""
    if N < 1 or m < 1:
        raise ParameterError("bank dims must be >= 1, got N=%d m=%d" % (N, m))
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(N, m))
    M /= np.linalg.norm(M, axis=1, keepdims=True)
    return MemoryBank(M, beta)


def update(bank: MemoryBank, index: int, h_s) -> None:
    """row <- beta*row + (1-beta)*h_s; touches exactly one row."""
    if not (0 <= index < bank.N):
        raise BoundsError(
            "bank index %d out of range [0, %d)" % (index, bank.N)
        )
    h = h_s.data if isinstance(h_s, T.Tensor) else np.asarray(h_s, dtype=np.float64)
    if h.shape != (bank.m,):
        raise ParameterError(
            "bank update expects a length-%d vector, got %s" % (bank.m, h.shape)
        )
    if not np.all(np.isfinite(h)):
        raise NumericError("bank update with non-finite values")
    bank.M[index] = bank.beta * bank.M[index] + (1.0 - bank.beta) * h
    bank.writes += 1


def retrieve(bank: MemoryBank, indices) -> list:
    """Immutable snapshots of the requested rows."""
    idx = list(indices)
    if len(set(idx)) != len(idx):
        raise ParameterError("bank retrieve with duplicate indices")
    for i in idx:
        if not (0 <= i < bank.N):
            raise ParameterError(
                "bank index %d out of range [0, %d)" % (i, bank.N)
            )
    out = [bank.M[i].copy() for i in idx]
    bank.reads += len(idx)
    return out
