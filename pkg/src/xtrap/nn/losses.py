"""Loss functions on top of the autodiff ops."""
from __future__ import annotations

import numpy as np

from ..errors import NonDistributionTarget
from .tensor import Tensor, softmax_cross_entropy


def check_distribution(target: np.ndarray) -> np.ndarray:
    t = np.asarray(target, dtype=np.float64)
    if t.ndim != 1 or np.any(t < 0) or abs(float(t.sum()) - 1.0) > 1e-9:
        raise NonDistributionTarget(f"target {t} is not a probability vector")
    return t


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Soft-target cross-entropy of one logit vector: -sum(t * log softmax(z))."""
    t = check_distribution(target)
    if not isinstance(logits, Tensor):
        logits = Tensor(logits)
    return softmax_cross_entropy(logits.reshape(1, -1), t.reshape(1, -1)).sum()


def batch_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-row soft-target cross-entropy, shape [N]."""
    t = np.asarray(targets, dtype=np.float64)
    for row in t:
        check_distribution(row)
    return softmax_cross_entropy(logits, t)
