"""Synthetic brightfield-like scenes of overlapping cells."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..config import ConfigError, DataConfig
from .raster import EmptyMaskError, rasterize_polygon
from .records import AnnotationInstance, AnnotationRecord

CELL, NUCLEUS = 0, 1
MAX_PLACEMENT_TRIES = 50


@dataclass(frozen=True)
class SceneSpec:
    seed: int | tuple = 0
    height: int = 64
    width: int = 64
    min_instances: int = 2
    max_instances: int = 4
    min_axis: float = 6.0
    max_axis: float = 12.0
    max_overlap: float = 0.15   # intersection / smaller area, per pair
    noise: float = 0.04
    background: float = 0.55
    multiclass: bool = False

    def validate(self) -> None:
        if self.height % 32 or self.width % 32 or self.height <= 0 or self.width <= 0:
            raise ConfigError(f"scene size {self.height}x{self.width} must be positive multiples of 32")
        if not 1 <= self.min_instances <= self.max_instances:
            raise ConfigError("need 1 <= min_instances <= max_instances")
        if not 0 < self.min_axis <= self.max_axis:
            raise ConfigError("need 0 < min_axis <= max_axis")
        if 2 * self.max_axis >= min(self.height, self.width):
            raise ConfigError("max_axis too large for the scene size")
        if not 0.0 <= self.max_overlap <= 1.0:
            raise ConfigError("max_overlap must lie in [0, 1]")
        if self.noise < 0 or not 0.0 <= self.background <= 1.0:
            raise ConfigError("noise must be >= 0 and background in [0, 1]")

    @classmethod
    def from_config(cls, cfg: DataConfig, seed, size: int | None = None) -> "SceneSpec":
        s = size or cfg.image_size
        return cls(seed, s, s, cfg.min_instances, cfg.max_instances, cfg.min_axis, cfg.max_axis,
                   cfg.max_overlap, cfg.noise, cfg.background, cfg.multiclass)


def blob_polygon(rng: np.random.Generator, cx: float, cy: float, a: float, b: float,
                 theta: float) -> np.ndarray:
    """Star-shaped perturbed ellipse with 32-60 vertices (never self-intersects)."""
    n = int(rng.integers(32, 61))
    t = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    r = np.ones(n)
    for k in (2, 3):
        r += rng.uniform(0.0, 0.08) * np.cos(k * t + rng.uniform(0, 2 * np.pi))
    ex, ey = a * r * np.cos(t), b * r * np.sin(t)
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([cx + c * ex - s * ey, cy + s * ex + c * ey], axis=1)


def _overlap_ok(mask: np.ndarray, others: list[np.ndarray], limit: float) -> bool:
    area = mask.sum()
    for o in others:
        inter = np.logical_and(mask, o).sum()
        if inter and (limit == 0.0 or inter / min(area, o.sum()) > limit):
            return False
    return True


def _render(spec: SceneSpec, rng: np.random.Generator, instances: list[AnnotationInstance]) -> np.ndarray:
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    gx, gy = rng.uniform(-0.05, 0.05, size=2)
    img = spec.background + gx * (xx - 0.5) + gy * (yy - 0.5)   # uneven illumination
    for inst in instances:
        inside = ndimage.distance_transform_edt(inst.mask)
        outside = ndimage.distance_transform_edt(~inst.mask)
        if inst.class_id == NUCLEUS:
            img = img - 0.12 * inst.mask
            continue
        img = img - 0.30 * np.exp(-inside / 1.5) * inst.mask       # dark membrane
        img = img + 0.12 * np.exp(-outside / 2.0) * ~inst.mask     # phase halo
        img = img + 0.06 * (1.0 - np.exp(-inside / 4.0)) * inst.mask
    img = ndimage.gaussian_filter(img, 0.8, mode="nearest")
    img = img + rng.normal(0.0, spec.noise, size=(h, w))
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0      # exact under 8-bit storage
    return np.repeat(img[None], 3, axis=0)


def generate_scene(spec: SceneSpec, image_id: str = "scene") -> tuple[np.ndarray, AnnotationRecord]:
    """Render one scene; returns a [3, H, W] float image in [0, 1] and its record.

    When a cell cannot be placed within the retry budget the scene keeps fewer
    instances; the record is always the truth.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    target = int(rng.integers(spec.min_instances, spec.max_instances + 1))
    cells: list[AnnotationInstance] = []
    for _ in range(target):
        for _ in range(MAX_PLACEMENT_TRIES):
            a, b = np.sort(rng.uniform(spec.min_axis, spec.max_axis, size=2))[::-1]
            cx = rng.uniform(a, w - a)
            cy = rng.uniform(a, h - a)
            poly = blob_polygon(rng, cx, cy, a, b, rng.uniform(0, np.pi))
            try:
                mask = rasterize_polygon(poly, h, w)
            except EmptyMaskError:
                continue
            if _overlap_ok(mask, [c.mask for c in cells], spec.max_overlap):
                cells.append(AnnotationInstance(CELL, poly, mask))
                break
    instances = list(cells)
    if spec.multiclass:
        for cell in cells:
            centre = cell.polygon.mean(axis=0)
            poly = centre + 0.4 * (cell.polygon - centre)
            try:
                instances.append(AnnotationInstance(NUCLEUS, poly, rasterize_polygon(poly, h, w)))
            except EmptyMaskError:
                pass
    record = AnnotationRecord(image_id, h, w, instances)
    return _render(spec, rng, instances), record


def image_seed(seed: int, index: int) -> tuple[int, int]:
    """Per-image seed; content does not depend on generation order."""
    return (int(seed), int(index))


def generate_dataset(cfg: DataConfig, seed: int, count: int | None = None,
                     size: int | None = None) -> list[tuple[np.ndarray, AnnotationRecord]]:
    n = cfg.count if count is None else count
    return [generate_scene(SceneSpec.from_config(cfg, image_seed(seed, i), size), f"img_{i:04d}")
            for i in range(n)]
