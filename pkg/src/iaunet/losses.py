"""Set-prediction training loss with deep supervision."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .config import LossWeights
from .core import Tensor, no_grad
from .core import functional as F
from .core.tensor import note_branch
from .matching import MatchAssignment, hungarian, matching_cost


@dataclass
class Target:
    """Ground truth for one image on the mask-logit grid."""

    classes: np.ndarray                 # [M] int
    masks: np.ndarray                   # [M, h, w] in {0, 1}
    valid: Optional[np.ndarray] = None  # [h, w] bool, False on padding

    @property
    def num_instances(self) -> int:
        return int(self.classes.shape[0])


@dataclass
class LossBreakdown:
    cls: float
    dice: float
    bce: float
    total: Tensor
    per_point: list[float] = field(default_factory=list)
    matches: list[list[MatchAssignment]] = field(default_factory=list)


def downsample_masks(masks: np.ndarray, factor: int) -> np.ndarray:
    """Block-average [M, H, W] masks by ``factor`` and keep cells covered > 50 %."""
    m, h, w = masks.shape
    if h % factor or w % factor:
        raise ValueError(f"mask size {(h, w)} not divisible by {factor}")
    cover = masks.reshape(m, h // factor, factor, w // factor, factor).mean(axis=(2, 4))
    return (cover > 0.5).astype(np.float64)


# -- per-row terms: inputs [R, P], outputs [R] ----------------------------------

def dice_rows(probs: Tensor, gt: np.ndarray, eps: float = 1.0, valid: Optional[np.ndarray] = None) -> Tensor:
    if valid is not None:
        probs = probs * Tensor(valid)
        gt = gt * valid
    inter = (probs * Tensor(gt)).sum(axis=-1)
    denom = probs.sum(axis=-1) + Tensor(gt.sum(axis=-1) + eps)
    return 1.0 - (2.0 * inter + eps) / denom


def bce_rows(logits: Tensor, gt: np.ndarray, valid: Optional[np.ndarray] = None) -> Tensor:
    per_pixel = F.softplus(logits) - logits * Tensor(gt)
    if valid is None:
        return per_pixel.mean(axis=-1)
    return (per_pixel * Tensor(valid)).sum(axis=-1) / Tensor(np.maximum(valid.sum(axis=-1), 1.0))


def dice_loss(pred_probs, gt, eps: float = 1.0) -> Tensor:
    """1 - (2 sum(p g) + eps) / (sum p + sum g + eps) over a whole mask."""
    p = pred_probs if isinstance(pred_probs, Tensor) else Tensor(pred_probs)
    return dice_rows(p.reshape(1, -1), np.asarray(gt, dtype=np.float64).reshape(1, -1), eps).reshape(())


def bce_loss(pred_logits, gt) -> Tensor:
    """Mean binary cross-entropy from logits over a whole mask."""
    x = pred_logits if isinstance(pred_logits, Tensor) else Tensor(pred_logits)
    return bce_rows(x.reshape(1, -1), np.asarray(gt, dtype=np.float64).reshape(1, -1)).reshape(())


def cls_loss(class_logits: Tensor, targets: np.ndarray, no_object_weight: float = 0.1) -> Tensor:
    """Class-weighted cross-entropy, weighted mean over queries.

    ``targets`` holds one class index per query; index K (the last logit) is
    "no object" and gets ``no_object_weight``, real classes get 1.
    """
    k1 = class_logits.shape[-1]
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    logits = class_logits.reshape(-1, k1)
    onehot = np.zeros((targets.size, k1))
    onehot[np.arange(targets.size), targets] = 1.0
    weights = np.where(targets == k1 - 1, no_object_weight, 1.0)
    nll = -(F.log_softmax_lastdim(logits) * Tensor(onehot)).sum(axis=-1)
    return (nll * Tensor(weights)).sum() / float(weights.sum())


class SetCriterion:
    """Hungarian-matched loss summed over every supervision point."""

    def __init__(self, weights: LossWeights, num_classes: int):
        self.weights = weights
        self.num_classes = num_classes

    def match(self, mask_logits: np.ndarray, class_logits: np.ndarray, target: Target) -> MatchAssignment:
        n = mask_logits.shape[0]
        if target.num_instances == 0:
            return MatchAssignment([], list(range(n)))
        cost = matching_cost(mask_logits.reshape(n, -1), class_logits,
                             target.masks.reshape(target.num_instances, -1), target.classes,
                             self.weights, None if target.valid is None else target.valid.reshape(-1))
        return hungarian(cost)

    def point_loss(self, mask_logits: Tensor, class_logits: Tensor, targets: Sequence[Target]):
        b, n, h, w = mask_logits.shape
        with no_grad():
            matches = [self.match(mask_logits.data[i], class_logits.data[i], t) for i, t in enumerate(targets)]
        note_branch(tuple(tuple(m.pairs) for m in matches))
        cls_targets = np.full((b, n), self.num_classes, dtype=np.int64)
        rows, gts, valids = [], [], []
        for i, (assignment, t) in enumerate(zip(matches, targets)):
            for p, g in assignment.pairs:
                cls_targets[i, p] = t.classes[g]
                rows.append(i * n + p)
                gts.append(t.masks[g].reshape(-1))
                valids.append(np.ones(h * w) if t.valid is None else t.valid.reshape(-1).astype(np.float64))
        wt = self.weights
        l_cls = cls_loss(class_logits, cls_targets, wt.no_object)
        if rows:
            sel = F.take(mask_logits.reshape(b * n, h * w), rows, axis=0)
            gt = np.stack(gts)
            valid = None if all(t.valid is None for t in targets) else np.stack(valids)
            l_dice = dice_rows(F.sigmoid(sel), gt, wt.dice_eps, valid).sum() / float(len(rows))
            l_bce = bce_rows(sel, gt, valid).sum() / float(len(rows))
        else:
            l_dice = l_bce = Tensor(0.0)
        total = wt.cls * l_cls + wt.dice * l_dice + wt.bce * l_bce
        return total, l_cls, l_dice, l_bce, matches

    def __call__(self, predictions, targets: Sequence[Target]) -> LossBreakdown:
        """``predictions``: InstancePrediction list, one per supervision point."""
        total = None
        cls = dice = bce = 0.0
        per_point, matches = [], []
        for pred in predictions:
            t, c, d, bc, m = self.point_loss(pred.mask_logits, pred.class_logits, targets)
            total = t if total is None else total + t
            cls += c.item()
            dice += d.item()
            bce += bc.item()
            per_point.append(t.item())
            matches.append(m)
        return LossBreakdown(cls, dice, bce, total, per_point, matches)
