"""Synthetic scenes, annotation records, augmentation and dataset files."""
from .augment import augment, hflip, resize_bilinear, resize_longest_side, resize_nearest, vflip
from .batching import make_batch, to_target
from .io import DatasetError, load_dataset, read_pgm, read_ppm, save_dataset, write_pgm, write_ppm
from .raster import EmptyMaskError, polygon_area, rasterize_polygon
from .records import AnnotationInstance, AnnotationRecord
from .synth import SceneSpec, generate_dataset, generate_scene, image_seed

__all__ = [
    "augment", "hflip", "vflip", "resize_bilinear", "resize_longest_side", "resize_nearest",
    "make_batch", "to_target", "DatasetError", "load_dataset", "read_pgm", "read_ppm", "save_dataset",
    "write_pgm", "write_ppm", "EmptyMaskError", "polygon_area", "rasterize_polygon",
    "AnnotationInstance", "AnnotationRecord", "SceneSpec", "generate_dataset", "generate_scene", "image_seed",
]
