"""Annotation records and their JSON form."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np


@dataclass
class AnnotationInstance:
    class_id: int
    polygon: np.ndarray   # [V, 2] float (x, y) pixel units, origin top-left
    mask: np.ndarray      # [H, W] bool

    def __eq__(self, other) -> bool:
        if not isinstance(other, AnnotationInstance):
            return NotImplemented
        return (self.class_id == other.class_id and np.array_equal(self.polygon, other.polygon)
                and np.array_equal(self.mask, other.mask))


@dataclass
class AnnotationRecord:
    image_id: str
    height: int
    width: int
    instances: list[AnnotationInstance] = field(default_factory=list)
    # False on padding pixels; None means every pixel is real. Not serialized.
    valid: Optional[np.ndarray] = None

    def __eq__(self, other) -> bool:
        if not isinstance(other, AnnotationRecord):
            return NotImplemented
        same_valid = (self.valid is None and other.valid is None) or (
            self.valid is not None and other.valid is not None and np.array_equal(self.valid, other.valid))
        return ((self.image_id, self.height, self.width) == (other.image_id, other.height, other.width)
                and self.instances == other.instances and same_valid)

    @property
    def classes(self) -> np.ndarray:
        return np.array([inst.class_id for inst in self.instances], dtype=np.int64)

    def masks(self) -> np.ndarray:
        if not self.instances:
            return np.zeros((0, self.height, self.width), dtype=bool)
        return np.stack([inst.mask for inst in self.instances])

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "height": self.height,
            "width": self.width,
            "instances": [{"class_id": int(inst.class_id),
                           "polygon": [[float(x), float(y)] for x, y in inst.polygon]}
                          for inst in self.instances],
        }
