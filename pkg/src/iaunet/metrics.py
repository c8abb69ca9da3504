"""Mask IoU and COCO-style average precision.

Protocol: per category, detections sorted by descending score (ties keep
input order) are greedily matched to the best still-free ground truth with
IoU >= t; precision is made monotone from the right and sampled at the 101
recall levels k/100. Values average over IoU thresholds and categories.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_LEVELS = np.arange(101) / 100.0
MAX_DETECTIONS = 100
AREA_RANGES = {"all": (0.0, math.inf), "small": (0.0, 32.0 ** 2),
               "medium": (32.0 ** 2, 96.0 ** 2), "large": (96.0 ** 2, math.inf)}


@dataclass
class Detection:
    class_id: int
    score: float
    mask: np.ndarray   # bool [H, W]


@dataclass
class EvalResult:
    ap: Optional[float]
    ap50: Optional[float]
    ap75: Optional[float]
    ap_s: Optional[float]
    ap_m: Optional[float]
    ap_l: Optional[float]
    per_image: dict[str, Optional[float]] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {"ap": self.ap, "ap50": self.ap50, "ap75": self.ap75, "ap_s": self.ap_s, "ap_m": self.ap_m,
                "ap_l": self.ap_l, "per_image": dict(sorted(self.per_image.items()))}


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a, b = a.astype(bool), b.astype(bool)
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 0.0


def iou_matrix(dt: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """[D, H, W] x [G, H, W] bool masks -> [D, G] IoU."""
    d = dt.reshape(len(dt), -1).astype(np.float64)
    g = gt.reshape(len(gt), -1).astype(np.float64)
    inter = d @ g.T
    union = d.sum(1)[:, None] + g.sum(1)[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


@dataclass
class _ImageMatch:
    """Per (image, category) matching for every threshold in one area range."""

    scores: np.ndarray        # [D] sorted descending
    matched: np.ndarray       # [T, D] bool
    dt_ignore: np.ndarray     # [T, D] bool
    num_gt: int               # non-ignored ground truths


def _match_image(dets: list[Detection], gt_masks: np.ndarray, area_rng) -> _ImageMatch:
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))[:MAX_DETECTIONS]
    dets = [dets[i] for i in order]
    lo, hi = area_rng
    gt_area = gt_masks.sum(axis=(1, 2))
    gt_ignore = (gt_area < lo) | (gt_area > hi)
    gt_order = np.argsort(gt_ignore, kind="stable")     # non-ignored first
    gt_masks, gt_ignore = gt_masks[gt_order], gt_ignore[gt_order]
    n_dt, n_gt, n_t = len(dets), len(gt_masks), len(IOU_THRESHOLDS)
    matched = np.zeros((n_t, n_dt), bool)
    dt_ignore = np.zeros((n_t, n_dt), bool)
    if n_dt:
        dt_masks = np.stack([d.mask for d in dets]).astype(bool)
        dt_area = dt_masks.reshape(n_dt, -1).sum(1)
        ious = iou_matrix(dt_masks, gt_masks) if n_gt else np.zeros((n_dt, 0))
        for ti, t in enumerate(IOU_THRESHOLDS):
            gt_taken = np.zeros(n_gt, bool)
            for di in range(n_dt):
                best, m = t, -1
                for gi in range(n_gt):
                    if gt_taken[gi]:
                        continue
                    if m > -1 and not gt_ignore[m] and gt_ignore[gi]:
                        break       # never trade a real match for an ignored one
                    if ious[di, gi] < best:
                        continue
                    best, m = ious[di, gi], gi
                if m > -1:
                    gt_taken[m] = True
                    matched[ti, di] = True
                    dt_ignore[ti, di] = gt_ignore[m]
                else:
                    dt_ignore[ti, di] = dt_area[di] < lo or dt_area[di] > hi
    scores = np.array([d.score for d in dets], dtype=np.float64)
    return _ImageMatch(scores, matched, dt_ignore, int((~gt_ignore).sum()))


def interpolated_precision(tp: np.ndarray, fp: np.ndarray, num_gt: int) -> np.ndarray:
    """Precision at each of the 101 recall levels; tp/fp in ranked order."""
    tpc, fpc = np.cumsum(tp), np.cumsum(fp)
    recall = tpc / num_gt
    precision = tpc / np.maximum(tpc + fpc, np.finfo(np.float64).tiny)
    # Monotone envelope from the right: best precision at any recall >= r.
    precision = np.maximum.accumulate(precision[::-1])[::-1] if len(precision) else precision
    idx = np.searchsorted(recall, RECALL_LEVELS, side="left")
    out = np.zeros(len(RECALL_LEVELS))
    ok = idx < len(precision)
    out[ok] = precision[idx[ok]]
    return out


def _accumulate(matches: list[_ImageMatch]) -> Optional[np.ndarray]:
    """[T, R] precision table, or None when there is no ground truth."""
    num_gt = sum(m.num_gt for m in matches)
    if num_gt == 0:
        return None
    scores = np.concatenate([m.scores for m in matches]) if matches else np.zeros(0)
    order = np.argsort(-scores, kind="mergesort")
    table = np.zeros((len(IOU_THRESHOLDS), len(RECALL_LEVELS)))
    for ti in range(len(IOU_THRESHOLDS)):
        hit = np.concatenate([m.matched[ti] for m in matches])[order]
        ign = np.concatenate([m.dt_ignore[ti] for m in matches])[order]
        table[ti] = interpolated_precision(hit[~ign], ~hit[~ign], num_gt)
    return table


def _gt_by_class(gt) -> tuple[np.ndarray, np.ndarray]:
    """Accept an AnnotationRecord or a list of (class_id, mask)."""
    items = [(inst.class_id, inst.mask) for inst in gt.instances] if hasattr(gt, "instances") else list(gt)
    if not items:
        return np.zeros(0, np.int64), np.zeros((0, 1, 1), bool)
    return np.array([c for c, _ in items], np.int64), np.stack([np.asarray(m, bool) for _, m in items])


def _tables(predictions: Mapping[str, Sequence], ground_truth: Mapping, image_ids, area: str):
    per_class = {}
    gts = {i: _gt_by_class(ground_truth[i]) for i in image_ids}
    classes = sorted({int(c) for i in image_ids for c in gts[i][0]}
                     | {int(d.class_id) for i in image_ids for d in predictions.get(i, [])})
    for c in classes:
        matches = []
        for i in image_ids:
            cls, masks = gts[i]
            dets = [d for d in predictions.get(i, []) if int(d.class_id) == c]
            matches.append(_match_image(dets, masks[cls == c], AREA_RANGES[area]))
        table = _accumulate(matches)
        if table is not None:
            per_class[c] = table
    return per_class


def _summarize(tables: dict, thresholds: Optional[Sequence[float]] = None) -> Optional[float]:
    if not tables:
        return None
    rows = slice(None) if thresholds is None else [IOU_THRESHOLDS.index(t) for t in thresholds]
    return float(np.mean([t[rows] for t in tables.values()]))


def evaluate(predictions: Mapping[str, Sequence], ground_truth: Mapping) -> EvalResult:
    """COCO-style mask AP.

    predictions: image_id -> detections (objects with class_id, score, mask).
    ground_truth: image_id -> AnnotationRecord or list of (class_id, mask).
    Images present only in ``predictions`` are ignored. A value is None when
    its stratum has no ground truth.
    """
    ids = sorted(ground_truth)
    full = _tables(predictions, ground_truth, ids, "all")
    per_image = {i: _summarize(_tables(predictions, ground_truth, [i], "all")) for i in ids}
    return EvalResult(
        ap=_summarize(full), ap50=_summarize(full, [0.5]), ap75=_summarize(full, [0.75]),
        ap_s=_summarize(_tables(predictions, ground_truth, ids, "small")),
        ap_m=_summarize(_tables(predictions, ground_truth, ids, "medium")),
        ap_l=_summarize(_tables(predictions, ground_truth, ids, "large")),
        per_image=per_image)


# -- prediction files ----------------------------------------------------------------

def rle_encode(mask: np.ndarray) -> list[int]:
    """Row-major runs of foreground as a flat [start, length, ...] list."""
    flat = np.concatenate([[0], mask.reshape(-1).astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(flat))
    starts, ends = edges[::2], edges[1::2]
    return [int(v) for pair in zip(starts, ends - starts) for v in pair]


def rle_decode(runs: Sequence[int], height: int, width: int) -> np.ndarray:
    if len(runs) % 2:
        raise ValueError("run-length list must have an even number of entries")
    flat = np.zeros(height * width, bool)
    for start, length in zip(runs[::2], runs[1::2]):
        if start < 0 or length < 0 or start + length > flat.size:
            raise ValueError(f"run ({start}, {length}) outside a {height}x{width} mask")
        flat[start:start + length] = True
    return flat.reshape(height, width)


def save_predictions(path, image_id: str, height: int, width: int, detections: Sequence) -> None:
    doc = {"image_id": image_id, "height": height, "width": width,
           "instances": [{"class_id": int(d.class_id), "score": float(d.score), "rle": rle_encode(d.mask)}
                         for d in detections]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_predictions(path) -> tuple[str, list[Detection]]:
    """Read one prediction file; masks come inline (``rle``) or as a PGM path (``mask``)."""
    from .data.io import read_pgm

    path = Path(path)
    doc = json.loads(path.read_text())
    h, w = doc["height"], doc["width"]
    dets = []
    for k, inst in enumerate(doc["instances"]):
        if "rle" in inst:
            mask = rle_decode(inst["rle"], h, w)
        elif "mask" in inst:
            mask = read_pgm(path.parent / inst["mask"]) > 0.5
        else:
            raise ValueError(f"{path}: instance {k} has neither 'rle' nor 'mask'")
        dets.append(Detection(int(inst["class_id"]), float(inst["score"]), mask))
    return doc["image_id"], dets


def load_prediction_dir(root) -> dict[str, list[Detection]]:
    out = {}
    for p in sorted(Path(root).glob("*.json")):
        image_id, dets = load_predictions(p)
        out[image_id] = dets
    return out
