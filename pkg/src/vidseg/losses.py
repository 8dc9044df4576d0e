"""The four training objectives, all expressed as noise-contrastive or
cross-entropy terms over unit embeddings.

Embeddings may be tape Vars (gradients flow) or plain arrays (treated as
constants, e.g. key-side positives and memory-bank negatives). Callers are
responsible for unit-normalizing embeddings; the losses only take dot
products, so slightly perturbed inputs (finite-difference probes) are fine.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nm


def _rows(negatives):
    if negatives is None:
        return 0
    value = negatives.value if isinstance(negatives, nm.Var) else negatives
    return value.shape[0]


def info_nce(query, positive, negatives, temperature):
    """(M+1)-way softmax cross-entropy with the positive in slot 0.

    Zero exactly when there are no negatives. Computed through log-sum-exp,
    so large similarity/temperature ratios stay stable.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if _rows(negatives) == 0:
        return np.float64(0.0)
    inv = 1.0 / temperature
    pos = nm.scale(nm.dot(query, positive), inv)
    neg = nm.scale(nm.matmul(negatives, query), inv)
    return nm.softmax_cross_entropy(nm.concat([pos, neg]), 0)


def loss_inter(query, positive_same, positive_b, positive_c, negatives, temperature):
    """Frame-level discrimination against the bank, averaged over the three
    positives drawn from the same video."""
    total = nm.add(nm.add(info_nce(query, positive_same, negatives, temperature),
                          info_nce(query, positive_b, negatives, temperature)),
                   info_nce(query, positive_c, negatives, temperature))
    return nm.scale(total, 1.0 / 3.0)


def loss_intra(query, positive_same, other_b, other_c, temperature):
    """Frame-level discrimination where the other two frames of the same
    video are the only negatives (no bank)."""
    return info_nce(query, positive_same, nm.stack_rows([other_b, other_c]), temperature)


def loss_segment(query_tuple, positive_tuple, negatives, temperature):
    """Video-level discrimination between tuple embeddings against the bank."""
    return info_nce(query_tuple, positive_tuple, negatives, temperature)


def loss_order(logits, label):
    """Cross-entropy of the 4-way order prediction."""
    size = (logits.value if isinstance(logits, nm.Var) else np.asarray(logits)).shape[0]
    if not 0 <= int(label) < size:
        raise ValueError(f"order label {label} out of range")
    return nm.softmax_cross_entropy(logits, int(label))


def total_loss(inter, intra, segment, order):
    """Unweighted sum of the four objectives."""
    return nm.add(nm.add(nm.add(inter, intra), segment), order)
