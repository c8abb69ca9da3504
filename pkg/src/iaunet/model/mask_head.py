"""Mask and class prediction from refined queries, plus inference-time rescoring."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import Conv2d, Linear, Module, ModuleList, ShapeError, Tensor
from ..core import functional as F


@dataclass
class InstancePrediction:
    mask_logits: Tensor            # [B, N, H/4, W/4]
    class_logits: Tensor           # [B, N, K+1], last index = no object
    scores: Optional[np.ndarray] = None
    binary_masks: Optional[np.ndarray] = None


@dataclass
class Instance:
    """One kept detection after postprocessing."""

    query: int
    class_id: int
    score: float
    mask: np.ndarray  # bool [out_h, out_w]


class MaskHead(Module):
    def __init__(self, backbone_channels: int, dim: int, num_classes: int, rng: np.random.Generator):
        super().__init__()
        self.proj = Conv2d(backbone_channels, dim, 1, rng)
        self.seg = ModuleList([Conv2d(dim, dim, 3, rng), Conv2d(dim, dim, 3, rng)])
        self.mask_embed = Linear(dim, dim, rng)
        self.class_embed = Linear(dim, num_classes + 1, rng)

    def fuse(self, x_b: Tensor, x_m: Tensor) -> Tensor:
        """High-resolution pixel embedding M(F(X_b) + U(X_m))."""
        up = F.bilinear_upsample2x(x_m)
        if up.shape[2:] != x_b.shape[2:]:
            raise ShapeError(f"mask head: upsampled mask features {up.shape[2:]} != backbone map {x_b.shape[2:]}")
        h = self.proj(x_b) + up
        for conv in self.seg:
            h = F.relu(conv(h))
        return h

    def predict_masks(self, queries: Tensor, fused: Tensor) -> Tensor:
        b, d, h, w = fused.shape
        q_c = self.mask_embed(queries)
        return F.matmul(q_c, fused.reshape(b, d, h * w)).reshape(b, q_c.shape[1], h, w)

    def classify(self, queries: Tensor) -> Tensor:
        return self.class_embed(queries)

    def forward(self, queries: Tensor, fused: Tensor) -> InstancePrediction:
        return InstancePrediction(self.predict_masks(queries, fused), self.classify(queries))


def softmax_np(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def rescore(class_probs: np.ndarray, mask_probs: np.ndarray, threshold: float = 0.5):
    """Maskness rescoring for one image.

    class_probs: [N, K+1]; mask_probs: [N, ...] in [0, 1].
    Returns (scores, class_conf, maskness, labels) where maskness is the mean
    probability over each query's foreground (prob > threshold) pixels, 0 if
    the foreground is empty, and scores = class_conf * maskness.
    """
    flat = mask_probs.reshape(mask_probs.shape[0], -1)
    fg = flat > threshold
    counts = fg.sum(axis=1)
    maskness = np.where(counts > 0, (flat * fg).sum(axis=1) / np.maximum(counts, 1), 0.0)
    real = class_probs[:, :-1]
    labels = real.argmax(axis=1)
    conf = real.max(axis=1)
    return conf * maskness, conf, maskness, labels


def nearest_resize(masks: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize of [..., h, w] using pixel-centre sampling."""
    h, w = masks.shape[-2:]
    rows = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), w - 1)
    return masks[..., rows[:, None], cols[None, :]]


def postprocess(class_logits: np.ndarray, mask_logits: np.ndarray, out_h: int, out_w: int,
                score_floor: float = 0.05, threshold: float = 0.5) -> list[Instance]:
    """Turn one image's raw outputs into scored binary instances, best first.

    Queries whose arg-max class is "no object" or whose rescored confidence
    falls below ``score_floor`` are dropped. Ties keep query order.
    """
    probs = softmax_np(class_logits)
    mask_probs = sigmoid_np(mask_logits)
    scores, _, _, labels = rescore(probs, mask_probs, threshold)
    no_object = probs.shape[1] - 1
    keep = [i for i in range(len(scores))
            if probs[i].argmax() != no_object and scores[i] >= score_floor]
    keep.sort(key=lambda i: (-scores[i], i))
    if not keep:
        return []
    binary = nearest_resize(mask_probs[keep] > threshold, out_h, out_w)
    return [Instance(int(i), int(labels[i]), float(scores[i]), binary[k]) for k, i in enumerate(keep)]
