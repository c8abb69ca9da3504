"""Independent reference computations used by the test-suite.

Nothing here touches the autodiff tape: gradients are central differences on
plain numpy forwards, matchings are exhaustive enumerations, and so on.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from iaunet.core import Tensor, no_grad


def elementwise_rel_error(analytic, numeric, floor: float = 1e-4) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor).

    ``floor`` keeps entries whose true gradient is ~0 from dividing rounding
    noise (~1e-11 at h=1e-4) by zero.
    """
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def fd_gradient(fn, arrays: list[np.ndarray], h: float = 1e-4) -> list[np.ndarray]:
    """Central differences of scalar ``fn()`` w.r.t. every entry of every array."""
    grads = []
    with no_grad():
        for arr in arrays:
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                orig = arr[idx]
                arr[idx] = orig + h
                plus = float(fn())
                arr[idx] = orig - h
                minus = float(fn())
                arr[idx] = orig
                g[idx] = (plus - minus) / (2 * h)
            grads.append(g)
    return grads


def check_op_gradients(op, inputs: list[Tensor], seed: int = 0, h: float = 1e-4) -> float:
    """Worst elementwise relative error of op's backward over all inputs.

    The scalar objective is sum(op(*inputs) * R) for a fixed random R so
    every output entry gets a distinct weight.
    """
    with no_grad():
        out_shape = op(*inputs).shape
    weights = np.random.default_rng(seed).standard_normal(out_shape)

    def objective():
        return float((op(*inputs).data * weights).sum())

    for t in inputs:
        t.grad = None
    out = op(*inputs)
    (out * Tensor(weights)).sum().backward()
    numeric = fd_gradient(objective, [t.data for t in inputs], h)
    return max(elementwise_rel_error(t.grad, n) for t, n in zip(inputs, numeric))


def brute_force_assignment(cost: np.ndarray) -> float:
    """Minimum total over all injective maps of the smaller side into the larger."""
    n, m = cost.shape
    best = math.inf
    if n >= m:
        for rows in itertools.permutations(range(n), m):
            best = min(best, math.fsum(cost[r, c] for c, r in enumerate(rows)))
    else:
        for cols in itertools.permutations(range(m), n):
            best = min(best, math.fsum(cost[r, c] for r, c in enumerate(cols)))
    return best


def brute_force_ap(scored_hits: list[tuple[float, bool]], num_gt: int, points: int = 101) -> float:
    """Interpolated AP from an explicit list of (score, is_true_positive).

    Walks every score cut-off, tabulates (recall, precision) pairs, then for
    each recall level takes the best precision at any cut-off reaching it.
    """
    if num_gt == 0:
        return float("nan")
    ordered = sorted(enumerate(scored_hits), key=lambda t: (-t[1][0], t[0]))
    curve = []
    tp = fp = 0
    for _, (_, hit) in ordered:
        tp += hit
        fp += not hit
        curve.append((tp / num_gt, tp / (tp + fp)))
    total = 0.0
    for k in range(points):
        r = k / (points - 1)
        reached = [p for rec, p in curve if rec >= r]
        total += max(reached) if reached else 0.0
    return total / points


def oracle_evaluate(predictions, ground_truth, thresholds=None):
    """Single-class AP from first principles: greedy matching then an explicit PR walk."""
    if thresholds is None:
        thresholds = [k / 20 for k in range(10, 20)]
    per_t = []
    num_gt = sum(len(g) for g in ground_truth.values())
    for t in thresholds:
        hits = []
        for image_id in sorted(ground_truth):
            gts = [m for _, m in ground_truth[image_id]]
            dets = sorted(enumerate(predictions.get(image_id, [])), key=lambda x: (-x[1].score, x[0]))
            taken = set()
            for _, d in dets:
                best, best_iou = None, t
                for gi, g in enumerate(gts):
                    inter = np.logical_and(d.mask, g).sum()
                    union = np.logical_or(d.mask, g).sum()
                    iou = inter / union if union else 0.0
                    if gi not in taken and iou >= best_iou:
                        best, best_iou = gi, iou
                if best is not None:
                    taken.add(best)
                hits.append((d.score, best is not None))
        per_t.append(brute_force_ap(hits, num_gt))
    return float(np.mean(per_t))
