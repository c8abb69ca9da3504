"""Dataset directory I/O: binary PPM/PGM images plus one JSON record per image.

Layout::

    <root>/images/<id>.ppm
    <root>/annotations/<id>.json
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .raster import EmptyMaskError, rasterize_polygon
from .records import AnnotationInstance, AnnotationRecord


class DatasetError(ValueError):
    """All validation problems found while loading, reported together."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__(f"{len(problems)} dataset problem(s):\n  " + "\n  ".join(problems))


def _to_u8(arr: np.ndarray) -> np.ndarray:
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """[3, H, W] floats in [0, 1] -> binary P6."""
    _, h, w = image.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + _to_u8(image).transpose(1, 2, 0).tobytes())


def write_pgm(path, mask: np.ndarray) -> None:
    """[H, W] bool or [0, 1] floats -> binary P5."""
    h, w = mask.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + _to_u8(mask.astype(np.float64)).tobytes())


def _read_netpbm(path, magic: bytes) -> tuple[np.ndarray, int, int]:
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        if end == pos:
            raise ValueError(f"{path}: truncated header")
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != magic:
        raise ValueError(f"{path}: expected {magic.decode()} header, got {tokens[0][:8]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit images are supported (maxval {maxval})")
    channels = 3 if magic == b"P6" else 1
    body = data[pos + 1:]
    if len(body) != w * h * channels:
        raise ValueError(f"{path}: expected {w * h * channels} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8), h, w


def read_ppm(path) -> np.ndarray:
    raw, h, w = _read_netpbm(path, b"P6")
    return raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def read_pgm(path) -> np.ndarray:
    raw, h, w = _read_netpbm(path, b"P5")
    return raw.reshape(h, w).astype(np.float64) / 255.0


def save_dataset(root, samples) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "annotations").mkdir(parents=True, exist_ok=True)
    for image, record in samples:
        write_ppm(root / "images" / f"{record.image_id}.ppm", image)
        text = json.dumps(record.to_json_dict(), indent=1, sort_keys=True)
        (root / "annotations" / f"{record.image_id}.json").write_text(text + "\n")


def _parse_record(raw, where: str, problems: list[str]):
    if not isinstance(raw, dict):
        problems.append(f"{where}: top level must be an object")
        return None
    for key, kind in (("image_id", str), ("height", int), ("width", int), ("instances", list)):
        if not isinstance(raw.get(key), kind) or isinstance(raw.get(key), bool):
            problems.append(f"{where}: field {key!r} missing or not {kind.__name__}")
            return None
    h, w = raw["height"], raw["width"]
    instances = []
    for k, inst in enumerate(raw["instances"]):
        here = f"{where}: instance {k}"
        if not isinstance(inst, dict) or not isinstance(inst.get("class_id"), int) \
                or not isinstance(inst.get("polygon"), list):
            problems.append(f"{here}: needs integer 'class_id' and list 'polygon'")
            continue
        try:
            poly = np.asarray(inst["polygon"], dtype=np.float64)
        except (TypeError, ValueError):
            problems.append(f"{here}: polygon must be a list of [x, y] numbers")
            continue
        if poly.ndim != 2 or poly.shape[1] != 2 or not np.all(np.isfinite(poly)):
            problems.append(f"{here}: polygon must be a list of finite [x, y] pairs")
            continue
        if poly.shape[0] < 3:
            problems.append(f"{here}: polygon has {poly.shape[0]} point(s), needs >= 3")
            continue
        try:
            mask = rasterize_polygon(poly, h, w)
        except EmptyMaskError:
            problems.append(f"{here}: polygon rasterizes to an empty mask")
            continue
        instances.append(AnnotationInstance(inst["class_id"], poly, mask))
    return AnnotationRecord(raw["image_id"], h, w, instances)


def load_dataset(root) -> list[tuple[np.ndarray, AnnotationRecord]]:
    """Load every image/record pair under ``root``, sorted by image id.

    Raises DatasetError listing every problem found (not only the first).
    """
    root = Path(root)
    images = {p.stem: p for p in sorted((root / "images").glob("*.ppm"))}
    notes = {p.stem: p for p in sorted((root / "annotations").glob("*.json"))}
    problems: list[str] = []
    for image_id in sorted(set(images) - set(notes)):
        problems.append(f"image {image_id!r} has no annotation file annotations/{image_id}.json")
    for image_id in sorted(set(notes) - set(images)):
        problems.append(f"annotation {image_id!r} has no image file images/{image_id}.ppm")
    samples = []
    for image_id in sorted(set(images) & set(notes)):
        where = f"annotations/{image_id}.json"
        try:
            raw = json.loads(notes[image_id].read_text())
        except json.JSONDecodeError as exc:
            problems.append(f"{where}: malformed JSON ({exc.msg} at line {exc.lineno})")
            continue
        record = _parse_record(raw, where, problems)
        if record is None:
            continue
        if record.image_id != image_id:
            problems.append(f"{where}: image_id {record.image_id!r} does not match file name")
            continue
        try:
            image = read_ppm(images[image_id])
        except ValueError as exc:
            problems.append(str(exc))
            continue
        if image.shape[1:] != (record.height, record.width):
            problems.append(f"{where}: size {record.height}x{record.width} != image {image.shape[1]}x{image.shape[2]}")
            continue
        samples.append((image, record))
    if problems:
        raise DatasetError(problems)
    return samples
