"""Bipartite matching between predicted and ground-truth instances."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import LossWeights
from .core import NumericError


@dataclass
class MatchAssignment:
    pairs: list[tuple[int, int]]               # (prediction, ground truth), sorted by prediction
    unmatched_predictions: list[int] = field(default_factory=list)

    def total(self, cost: np.ndarray) -> float:
        return math.fsum(cost[p, g] for p, g in self.pairs)


def _assign_rows(cost: np.ndarray) -> np.ndarray:
    """Shortest-augmenting-path Kuhn-Munkres for n_rows <= n_cols.

    Returns col_of_row. Potentials stay on the scale of the costs themselves
    because no padding is introduced.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    row_of_col = np.zeros(m + 1, dtype=np.int64)   # 1-based row, 0 = free
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of_col[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of_col[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1     # lowest index on ties
            delta = candidates[j1 - 1]
            u[row_of_col[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if row_of_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of_col[j0] = row_of_col[j1]
            j0 = j1
    col_of_row = np.empty(n, dtype=np.int64)
    for j in range(1, m + 1):
        if row_of_col[j]:
            col_of_row[row_of_col[j] - 1] = j - 1
    return col_of_row


def hungarian(cost: np.ndarray) -> MatchAssignment:
    """Minimum-cost one-to-one assignment on an [N predictions, M targets] matrix.

    Exactly min(N, M) pairs are returned. The solver always runs with the
    shorter side as rows.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    n, m = cost.shape
    if not np.all(np.isfinite(cost)):
        raise NumericError("cost matrix contains non-finite entries")
    if n == 0 or m == 0:
        return MatchAssignment([], list(range(n)))
    if m <= n:
        pred_of_gt = _assign_rows(cost.T)
        pairs = sorted((int(p), g) for g, p in enumerate(pred_of_gt))
    else:
        gt_of_pred = _assign_rows(cost)
        pairs = [(p, int(g)) for p, g in enumerate(gt_of_pred)]
    matched = {p for p, _ in pairs}
    return MatchAssignment(pairs, [p for p in range(n) if p not in matched])


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def matching_cost(mask_logits: np.ndarray, class_logits: np.ndarray, gt_masks: np.ndarray,
                  gt_classes: np.ndarray, weights: LossWeights,
                  valid: Optional[np.ndarray] = None) -> np.ndarray:
    """[N, M] cost: -w_cls * p(class) + w_dice * dice + w_bce * mean BCE.

    mask_logits [N, P] and gt_masks [M, P] must share one pixel grid; ``valid``
    ([P], optional) restricts both mask terms to real (non-padding) pixels.
    """
    n = mask_logits.shape[0]
    m = gt_masks.shape[0]
    if m == 0:
        return np.zeros((n, 0))
    x = mask_logits.reshape(n, -1)
    g = gt_masks.reshape(m, -1).astype(np.float64)
    vw = np.ones(x.shape[1]) if valid is None else valid.reshape(-1).astype(np.float64)
    z = class_logits - class_logits.max(axis=1, keepdims=True)
    probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    cost_cls = -probs[:, np.asarray(gt_classes, dtype=np.int64)]

    p = _sigmoid(x) * vw
    gv = g * vw
    eps = weights.dice_eps
    cost_dice = 1.0 - (2.0 * p @ gv.T + eps) / (p.sum(axis=1)[:, None] + gv.sum(axis=1)[None, :] + eps)

    n_valid = max(vw.sum(), 1.0)
    cost_bce = ((np.logaddexp(0.0, x) * vw).sum(axis=1)[:, None] - (x * vw) @ g.T) / n_valid
    return weights.cls * cost_cls + weights.dice * cost_dice + weights.bce * cost_bce
