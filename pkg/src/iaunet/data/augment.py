"""Scale jitter, fixed-size crop, flips, and longest-side resizing."""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..core.functional import bilinear_matrix
from .records import AnnotationInstance, AnnotationRecord

SCALE_RANGE = (0.8, 1.5)


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """[C, H, W] bilinear resize (half-pixel centres, edge clamped)."""
    mh = bilinear_matrix(image.shape[-2], out_h)
    mw = bilinear_matrix(image.shape[-1], out_w)
    return mh @ image @ mw.T


def resize_nearest(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = mask.shape[-2:]
    rows = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), w - 1)
    return mask[..., rows[:, None], cols[None, :]]


def _window(arr: np.ndarray, top: int, left: int, h: int, w: int, fill=0) -> np.ndarray:
    """Crop ``arr[..., top:top+h, left:left+w]``, padding out-of-range cells with ``fill``."""
    out = np.full(arr.shape[:-2] + (h, w), fill, dtype=arr.dtype)
    sh, sw = arr.shape[-2:]
    y0, x0 = max(top, 0), max(left, 0)
    y1, x1 = min(top + h, sh), min(left + w, sw)
    if y0 < y1 and x0 < x1:
        out[..., y0 - top:y1 - top, x0 - left:x1 - left] = arr[..., y0:y1, x0:x1]
    return out


def _rebuild(record: AnnotationRecord, h: int, w: int, transform, valid) -> AnnotationRecord:
    kept = []
    for inst in record.instances:
        poly, mask = transform(inst.polygon, inst.mask)
        if mask.any():
            kept.append(AnnotationInstance(inst.class_id, poly, mask))
    return AnnotationRecord(record.image_id, h, w, kept, valid)


def hflip(image: np.ndarray, record: AnnotationRecord):
    w = record.width
    valid = None if record.valid is None else record.valid[:, ::-1].copy()
    rec = _rebuild(record, record.height, w,
                   lambda p, m: (np.stack([w - p[:, 0], p[:, 1]], 1), m[:, ::-1].copy()), valid)
    return image[..., ::-1].copy(), rec


def vflip(image: np.ndarray, record: AnnotationRecord):
    h = record.height
    valid = None if record.valid is None else record.valid[::-1].copy()
    rec = _rebuild(record, h, record.width,
                   lambda p, m: (np.stack([p[:, 0], h - p[:, 1]], 1), m[::-1].copy()), valid)
    return image[..., ::-1, :].copy(), rec


def augment(image: np.ndarray, record: AnnotationRecord, rng: np.random.Generator,
            out_size: Optional[tuple[int, int]] = None, *, scale: Optional[float] = None,
            offset: Optional[tuple[int, int]] = None, flip_h: Optional[bool] = None,
            flip_v: Optional[bool] = None):
    """Scale jitter in [0.8, 1.5], random fixed-size crop, random h/v flips.

    Keyword overrides pin individual random choices. Instances whose mask is
    empty after cropping are dropped. Crop cells outside the scaled image are
    zero-filled and marked invalid in ``record.valid``.
    """
    h, w = record.height, record.width
    out_h, out_w = out_size or (h, w)
    s = rng.uniform(*SCALE_RANGE) if scale is None else scale
    sh, sw = max(int(round(h * s)), 1), max(int(round(w * s)), 1)
    if offset is None:
        dy, dx = sh - out_h, sw - out_w
        offset = (int(rng.integers(min(dy, 0), max(dy, 0) + 1)), int(rng.integers(min(dx, 0), max(dx, 0) + 1)))
    top, left = offset
    do_h = bool(rng.random() < 0.5) if flip_h is None else flip_h
    do_v = bool(rng.random() < 0.5) if flip_v is None else flip_v

    scaled = image if (sh, sw) == (h, w) else resize_bilinear(image, sh, sw)
    img = _window(scaled, top, left, out_h, out_w)
    base_valid = np.ones((h, w), bool) if record.valid is None else record.valid
    valid = _window(resize_nearest(base_valid, sh, sw), top, left, out_h, out_w, False)
    fx, fy = sw / w, sh / h

    def transform(poly, mask):
        p = np.stack([poly[:, 0] * fx - left, poly[:, 1] * fy - top], 1)
        return p, _window(resize_nearest(mask, sh, sw), top, left, out_h, out_w, False)

    rec = _rebuild(record, out_h, out_w, transform, None if valid.all() and record.valid is None else valid)
    if do_h:
        img, rec = hflip(img, rec)
    if do_v:
        img, rec = vflip(img, rec)
    return img, rec


def resize_longest_side(image: np.ndarray, record: AnnotationRecord, size: int):
    """Scale so the longer side equals ``size`` and zero-pad bottom/right to a square."""
    h, w = record.height, record.width
    s = size / max(h, w)
    nh, nw = min(max(int(round(h * s)), 1), size), min(max(int(round(w * s)), 1), size)
    img = _window(resize_bilinear(image, nh, nw), 0, 0, size, size)
    valid = _window(np.ones((nh, nw), bool), 0, 0, size, size, False)

    def transform(poly, mask):
        p = np.stack([poly[:, 0] * nw / w, poly[:, 1] * nh / h], 1)
        return p, _window(resize_nearest(mask, nh, nw), 0, 0, size, size, False)

    return img, _rebuild(record, size, size, transform, None if valid.all() else valid)
