"""Small shared constructors for model-level tests."""
from __future__ import annotations

import numpy as np

from iaunet.losses import Target
from iaunet.verify import tiny_model_config as tiny_config  # N=4, D=16, runs on 32x32 in milliseconds


def random_target(rng: np.random.Generator, m: int, h: int, w: int, num_classes: int = 1) -> Target:
    masks = np.zeros((m, h, w))
    for k in range(m):
        y0, x0 = rng.integers(0, h - 2), rng.integers(0, w - 2)
        dy, dx = rng.integers(2, h // 2 + 2), rng.integers(2, w // 2 + 2)
        masks[k, y0:y0 + dy, x0:x0 + dx] = 1.0
    return Target(rng.integers(0, num_classes, size=m), masks)


def permute_target(t: Target, perm) -> Target:
    perm = np.asarray(perm)
    return Target(t.classes[perm], t.masks[perm], t.valid)


def box_mask(h, w, y0, y1, x0, x1):
    m = np.zeros((h, w), bool)
    m[y0:y1, x0:x1] = True
    return m


def random_scene(rng, n_img=3, size=16):
    """Single-class ground truth plus noisy copies and random boxes as detections."""
    from iaunet.metrics import Detection

    gts, preds = {}, {}
    for i in range(n_img):
        img = f"im{i}"
        gts[img] = []
        for _ in range(rng.integers(0, 4)):
            y, x = rng.integers(0, size - 4, 2)
            gts[img].append((0, box_mask(size, size, y, y + rng.integers(2, 6), x, x + rng.integers(2, 6))))
        preds[img] = []
        for _ in range(rng.integers(0, 5)):
            if gts[img] and rng.random() < 0.6:
                base = gts[img][rng.integers(len(gts[img]))][1]
                m = base ^ (rng.random(base.shape) < 0.05)
            else:
                y, x = rng.integers(0, size - 4, 2)
                m = box_mask(size, size, y, y + rng.integers(2, 6), x, x + rng.integers(2, 6))
            preds[img].append(Detection(0, float(rng.random()), m))
    return preds, gts


# One annotation file of the on-disk dataset layout.
ANNOTATION_SCHEMA = {
    "type": "object",
    "required": ["image_id", "height", "width", "instances"],
    "additionalProperties": False,
    "properties": {
        "image_id": {"type": "string"},
        "height": {"type": "integer", "minimum": 1},
        "width": {"type": "integer", "minimum": 1},
        "instances": {"type": "array", "items": {
            "type": "object",
            "required": ["class_id", "polygon"],
            "additionalProperties": False,
            "properties": {
                "class_id": {"type": "integer", "minimum": 0},
                "polygon": {"type": "array", "minItems": 3, "items": {
                    "type": "array", "minItems": 2, "maxItems": 2, "items": {"type": "number"}}},
            },
        }},
    },
}
