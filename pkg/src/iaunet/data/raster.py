from __future__ import annotations

import numpy as np


class EmptyMaskError(ValueError):
    """Polygon covers no pixel centre (degenerate or out of bounds)."""


def polygon_area(polygon) -> float:
    """Shoelace area, always non-negative."""
    p = np.asarray(polygon, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def rasterize_polygon(polygon, height: int, width: int) -> np.ndarray:
    """Even-odd fill sampled at pixel centres (j + 0.5, i + 0.5).

    Raises EmptyMaskError when no pixel centre falls inside.
    """
    p = np.asarray(polygon, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 3:
        raise ValueError(f"polygon needs >= 3 (x, y) vertices, got shape {p.shape}")
    mask = np.zeros((height, width), dtype=bool)
    # Only scan the bounding box.
    r0 = max(int(np.floor(p[:, 1].min() - 0.5)), 0)
    r1 = min(int(np.ceil(p[:, 1].max() - 0.5)) + 1, height)
    c0 = max(int(np.floor(p[:, 0].min() - 0.5)), 0)
    c1 = min(int(np.ceil(p[:, 0].max() - 0.5)) + 1, width)
    if r0 < r1 and c0 < c1:
        py = (np.arange(r0, r1) + 0.5)[:, None, None]
        px = (np.arange(c0, c1) + 0.5)[None, :, None]
        x1, y1 = p[:, 0], p[:, 1]
        x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
        straddles = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        crossings = (straddles & (px < x_cross)).sum(axis=-1)
        mask[r0:r1, c0:c1] = crossings % 2 == 1
    if not mask.any():
        raise EmptyMaskError("polygon rasterizes to an empty mask")
    return mask
