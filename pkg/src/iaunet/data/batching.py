from __future__ import annotations

import numpy as np

from ..losses import Target, downsample_masks
from .records import AnnotationRecord

MASK_STRIDE = 4   # mask logits live at 1/4 input resolution


def to_target(record: AnnotationRecord, stride: int = MASK_STRIDE) -> Target:
    masks = downsample_masks(record.masks().astype(np.float64), stride)
    valid = None
    if record.valid is not None:
        valid = downsample_masks(record.valid[None].astype(np.float64), stride)[0] > 0
    # An instance can vanish at logit resolution; it still counts as ground truth.
    return Target(record.classes, masks, valid)


def make_batch(samples, stride: int = MASK_STRIDE):
    """Stack (image, record) pairs into a [B, 3, H, W] array plus one Target per image."""
    images = np.stack([img for img, _ in samples]).astype(np.float64)
    return images, [to_target(rec, stride) for _, rec in samples]
