"""Training losses and the five-term total.

The total combines a proposal-center regression term (standing in for
the host detector's voting loss), the objectness term, a box-size
regression term, semantic classification, and the relation term, with
weights (1.0, 0.5, 1.0, 0.1, 0.1). The relation term itself is the sum
of the semantic-relation and spatial-relation losses.

Every loss returns its gradient alongside the value; the training loop
wires those into the reverse pass directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError, TrainingDivergenceError

DEFAULT_LAMBDAS = (1.0, 0.5, 1.0, 0.1, 0.1)


@dataclass(frozen=True)
class LossBreakdown:
    vote_analogue: float
    objectness: float
    box: float
    classification: float
    relation: float
    total: float

    FIELDS = ("vote_analogue", "objectness", "box", "classification", "relation")


def loss_total(vote_analogue, objectness, box, classification, relation,
               lambdas=DEFAULT_LAMBDAS) -> LossBreakdown:
    """Weighted recombination; math.fsum keeps it exact and
    order-independent."""
    parts = (vote_analogue, objectness, box, classification, relation)
    for name, value in zip(LossBreakdown.FIELDS, parts):
        if not math.isfinite(value):
            raise TrainingDivergenceError(f"non-finite loss part {name!r}: {value}")
    total = math.fsum(lam * part for lam, part in zip(lambdas, parts))
    return LossBreakdown(*parts, total=total)


def _sigmoid(x):
    # tanh form is stable for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def loss_weighted_bce(logits, labels, mask, w0, w1):
    """Class-weighted binary cross entropy over the unmasked items.

    loss = -(1/M) sum_unmasked [ w1 y log p + w0 (1-y) log(1-p) ],
    p = sigmoid(logit), M = unmasked count. Stabilized through
    log-sigmoid (softplus). Returns (loss, grad_wrt_logits, has_valid);
    an all-masked batch yields (0.0, zeros, False).
    """
    x = np.asarray(logits, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    m = np.asarray(mask, dtype=np.float64).reshape(-1)
    if not (x.shape == y.shape == m.shape):
        raise ShapeError(
            f"weighted BCE shape mismatch: {x.shape}, {y.shape}, {m.shape}")
    count = m.sum()
    if count == 0:
        return 0.0, np.zeros_like(x), False
    softplus_pos = np.logaddexp(0.0, x)    # -log(1 - p)
    softplus_neg = np.logaddexp(0.0, -x)   # -log p
    per_item = w1 * y * softplus_neg + w0 * (1.0 - y) * softplus_pos
    loss = float((per_item * m).sum() / count)
    p = _sigmoid(x)
    grad = m * (w1 * y * (p - 1.0) + w0 * (1.0 - y) * p) / count
    return loss, grad, True


def softmax_cross_entropy(logits, targets):
    """Mean softmax cross entropy with integer targets.
    Returns (loss, grad_wrt_logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    loss = float(-logp[np.arange(n), targets].mean())
    grad = np.exp(logp)
    grad[np.arange(n), targets] -= 1.0
    return loss, grad / n


def smooth_l1(pred, target, row_mask=None):
    """Huber loss (delta = 1) averaged over the elements of unmasked rows.
    Returns (loss, grad_wrt_pred, has_valid)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if row_mask is None:
        row_mask = np.ones(pred.shape[0], dtype=bool)
    rows = np.asarray(row_mask, dtype=bool)
    count = rows.sum() * pred.shape[1]
    grad = np.zeros_like(pred)
    if count == 0:
        return 0.0, grad, False
    t = pred[rows] - target[rows]
    small = np.abs(t) < 1.0
    per = np.where(small, 0.5 * t * t, np.abs(t) - 0.5)
    loss = float(per.sum() / count)
    grad[rows] = np.where(small, t, np.sign(t)) / count
    return loss, grad, True
