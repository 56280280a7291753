"""Negative selection for the contrastive term and mask generation for
masked-token pretraining.

Finetuning negatives must carry a different label than the positive;
pretraining negatives come from the positive's own mini-batch, which makes
them hard by construction.  If fewer than K candidates exist, all of them
are used rather than sampling with replacement, keeping the (K+1)-way
softmax free of duplicate classes.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParameterError, SamplingError


@dataclass
class NegativePlan:
    positive_index: int
    negative_indices: np.ndarray

    def __post_init__(self):
        self.negative_indices = np.asarray(self.negative_indices, dtype=np.int64)
        if self.positive_index in self.negative_indices:
            raise SamplingError("positive index appears among negatives")
        if len(set(self.negative_indices.tolist())) != self.negative_indices.size:
            raise SamplingError("negative indices must be distinct")


@dataclass
class MaskingPlan:
    masked_positions: np.ndarray  # positions within the sequence
    original_ids: np.ndarray  # targets at those positions

    def __post_init__(self):
        self.masked_positions = np.asarray(self.masked_positions, dtype=np.int64)
        self.original_ids = np.asarray(self.original_ids, dtype=np.int64)
        if self.masked_positions.shape != self.original_ids.shape:
            raise ParameterError("masked positions and targets must align")


def sample_negatives_finetune(labels, positive_index: int, K: int,
                              rng) -> NegativePlan:
    """K distinct dataset indices with labels different from the positive's.

    Draws uniformly without replacement; if fewer than K eligible indices
    exist, returns all of them.
    """
    labels = np.asarray(labels)
    if K < 0:
        raise ParameterError("K must be >= 0, got %d" % K)
    if not (0 <= positive_index < labels.shape[0]):
        raise ParameterError("positive index %d out of range" % positive_index)
    if K == 0:
        return NegativePlan(positive_index, np.empty(0, dtype=np.int64))
    eligible = np.flatnonzero(labels != labels[positive_index])
    if eligible.size == 0:
        raise SamplingError(
            "no example with a label different from the positive's"
        )
    take = min(K, eligible.size)
    chosen = rng.choice(eligible, size=take, replace=False)
    return NegativePlan(positive_index, np.sort(chosen))


def sample_negatives_pretrain(batch_indices, positive_position_in_batch: int,
                              K: int, rng) -> NegativePlan:
    """min(K, B-1) dataset indices from the positive's own mini-batch."""
    batch_indices = np.asarray(batch_indices)
    B = batch_indices.shape[0]
    if not (0 <= positive_position_in_batch < B):
        raise ParameterError(
            "positive position %d out of range" % positive_position_in_batch
        )
    if K < 0:
        raise ParameterError("K must be >= 0, got %d" % K)
    if K == 0:
        return NegativePlan(int(batch_indices[positive_position_in_batch]),
                            np.empty(0, dtype=np.int64))
    if B < 2:
        raise SamplingError("in-batch negatives need batch size >= 2")
    others = np.delete(np.arange(B), positive_position_in_batch)
    take = min(K, B - 1)
    chosen = rng.choice(others, size=take, replace=False)
    return NegativePlan(int(batch_indices[positive_position_in_batch]),
                        np.sort(batch_indices[chosen]))


def make_masking_plan(tokens, maskable, mask_id: int, rng,
                      mask_rate: float = 0.15):
    """Independent masking of maskable positions at mask_rate, >= 1 ensured.

    ``maskable`` is a boolean array marking positions eligible for masking
    (special tokens and padding are not).  Returns (masked token ids, plan).
    """
    if not (0.0 < mask_rate < 1.0):
        raise ParameterError("mask_rate must be in (0,1), got %r" % mask_rate)
    tokens = np.asarray(tokens, dtype=np.int64)
    maskable = np.asarray(maskable, dtype=bool)
    if tokens.shape != maskable.shape or tokens.ndim != 1:
        raise ParameterError("tokens and maskable must be equal-length 1D")
    if not maskable.any():
        raise InputError("sequence has no maskable tokens")
    hits = maskable & (rng.random(tokens.shape[0]) < mask_rate)
    while not hits.any():
        # a sequence must contribute at least one target
        hits = maskable & (rng.random(tokens.shape[0]) < mask_rate)
    positions = np.flatnonzero(hits)
    plan = MaskingPlan(positions, tokens[positions])
    masked = tokens.copy()
    masked[positions] = mask_id
    return masked, plan
