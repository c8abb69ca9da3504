"""Central finite-difference checks against the analytic tape."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad, record_branches


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """||a - n|| / max(||a||, ||n||, floor)."""
    analytic = np.ravel(analytic)
    numeric = np.ravel(numeric)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / denom)


def numeric_grad(loss_fn: Callable[[], Tensor], array: np.ndarray, indices: Sequence[tuple],
                 h: float = 1e-4) -> np.ndarray:
    """Central differences of ``loss_fn`` w.r.t. selected entries of ``array`` (mutated and restored)."""
    out = np.empty(len(indices))
    with no_grad():
        for k, idx in enumerate(indices):
            orig = array[idx]
            array[idx] = orig + h
            plus = loss_fn().item()
            array[idx] = orig - h
            minus = loss_fn().item()
            array[idx] = orig
            out[k] = (plus - minus) / (2 * h)
    return out


def sample_indices(shape: tuple[int, ...], limit: Optional[int], rng: np.random.Generator) -> list[tuple]:
    total = int(np.prod(shape))
    if limit is None or total <= limit:
        flat = np.arange(total)
    else:
        flat = np.sort(rng.choice(total, size=limit, replace=False))
    return [np.unravel_index(i, shape) for i in flat]


def _smooth_entry_grad(loss_fn, array: np.ndarray, idx: tuple, h: float, baseline: list) -> Optional[float]:
    """Central difference at one entry, or None if either probe leaves the smooth piece."""
    orig = array[idx]
    values = []
    for shift in (h, -h):
        array[idx] = orig + shift
        with record_branches() as log:
            values.append(loss_fn().item())
        if log != baseline:
            array[idx] = orig
            return None
    array[idx] = orig
    return (values[0] - values[1]) / (2 * h)


def check_gradients(loss_fn: Callable[[], Tensor], tensors: dict[str, Tensor], h: float = 1e-4,
                    samples_per_tensor: Optional[int] = None, rng: Optional[np.random.Generator] = None,
                    floor: float = 1e-8, skipped: Optional[list] = None) -> dict[str, float]:
    """Relative error per named tensor between backward() and central differences.

    With ``samples_per_tensor`` set, only that many randomly chosen entries of
    each tensor are differenced. Entries whose +-h probes change a branch
    decision (a ReLU sign or a matching) straddle a kink where the central
    difference is meaningless; those are skipped and another entry is drawn.
    A tensor with no smooth entry at all reports an error of 0 and its name is
    appended to ``skipped``. ``floor`` is the gradient norm treated as zero.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors.values():
        t.grad = None
    with record_branches() as baseline:
        loss = loss_fn()
    loss.backward()
    report = {}
    with no_grad():
        for name, t in tensors.items():
            analytic_full = t.grad if t.grad is not None else np.zeros(t.shape)
            want = t.size if samples_per_tensor is None else min(samples_per_tensor, t.size)
            order = rng.permutation(t.size) if samples_per_tensor is not None else np.arange(t.size)
            analytic, numeric = [], []
            for flat in order:
                if len(numeric) == want:
                    break
                idx = np.unravel_index(int(flat), t.shape)
                g = _smooth_entry_grad(loss_fn, t.data, idx, h, baseline)
                if g is not None:
                    analytic.append(analytic_full[idx])
                    numeric.append(g)
            if not numeric and skipped is not None:
                skipped.append(name)
            report[name] = relative_error(np.array(analytic), np.array(numeric), floor) if numeric else 0.0
    return report
