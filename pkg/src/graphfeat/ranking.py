"""Link-prediction ranking metrics with pessimistic tie handling.

A positive's rank is one plus the number of its candidate negatives scoring
at least as high, so ties count against the positive.
"""
from __future__ import annotations

import numpy as np

from .errors import InputError


def ranks(positive_scores, negative_scores) -> np.ndarray:
    pos = np.asarray(positive_scores, dtype=np.float64).reshape(-1)
    neg = np.asarray(negative_scores, dtype=np.float64)
    if neg.ndim != 2 or neg.shape[0] != pos.shape[0]:
        raise InputError(
            f"negative scores shape {neg.shape} not aligned with {pos.shape[0]} positives")
    if neg.shape[1] < 1:
        raise InputError("each positive needs at least one negative")
    if np.isnan(pos).any() or np.isnan(neg).any():
        raise InputError("NaN score")
    return 1 + (neg >= pos[:, None]).sum(axis=1)


def mrr(positive_scores, negative_scores) -> float:
    """Mean reciprocal rank over positives."""
    r = ranks(positive_scores, negative_scores)
    return float(np.mean(1.0 / r)) if r.size else 0.0


def hits_at_k(positive_scores, negative_scores, k: int) -> float:
    """Fraction of positives whose rank is ``<= k``."""
    if k < 1:
        raise InputError("k must be >= 1")
    r = ranks(positive_scores, negative_scores)
    return float(np.mean(r <= k)) if r.size else 0.0
