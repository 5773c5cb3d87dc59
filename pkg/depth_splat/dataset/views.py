"""Posed training / test views and the sparse-view dataset that groups them."""

from dataclasses import dataclass, field as dataclass_field
from typing import List, Optional, Tuple

import numpy as np

from depth_splat.errors import DatasetFormatError, DimensionMismatchError
from depth_splat.field.camera import Camera
from depth_splat.render.buffers import DepthMap, ImageBuffer


@dataclass
class View:
    """One posed image.

    Attributes:
        name: file stem used on disk
        image: ImageBuffer
        camera: Camera whose width / height match the image
        mono_depth: Optional monocular-like depth map (up to an unknown scale and shift)
        gt_depth: Optional ground-truth depth map, used only for evaluation
    """

    name: str
    image: ImageBuffer
    camera: Camera
    mono_depth: Optional[DepthMap] = None
    gt_depth: Optional[DepthMap] = None

    def __post_init__(self):
        expected = (self.camera.height, self.camera.width)
        if (self.image.height, self.image.width) != expected:
            raise DimensionMismatchError(
                f"View {self.name}: image is {self.image.width}x{self.image.height}, camera expects "
                f"{self.camera.width}x{self.camera.height}"
            )
        for label, depth in (("mono depth", self.mono_depth), ("ground-truth depth", self.gt_depth)):
            if depth is None:
                continue
            if depth.depth.shape != expected:
                raise DimensionMismatchError(
                    f"View {self.name}: {label} has shape {depth.depth.shape}, image has shape {expected}"
                )
            if np.any(depth.depth < 0) or not np.all(np.isfinite(depth.depth)):
                raise DatasetFormatError(f"View {self.name}: {label} has negative or non-finite values")


def _guard_split_resolution(views, split):
    sizes = {(view.camera.width, view.camera.height) for view in views}
    if len(sizes) > 1:
        raise DimensionMismatchError(f"{split} views have differing resolutions {sorted(sizes)}")


@dataclass
class Dataset:
    """Sparse training views, held-out test views and the scene bounding box (lower, upper)"""

    train: List[View]
    test: List[View] = dataclass_field(default_factory=list)
    box: Tuple[np.ndarray, np.ndarray] = (np.full(3, -1.0), np.full(3, 1.0))

    def __post_init__(self):
        self.box = tuple(np.asarray(corner, dtype=float).reshape(3) for corner in self.box)
        _guard_split_resolution(self.train, "Training")
        _guard_split_resolution(self.test, "Test")

    @property
    def camera_centers(self):
        return np.array([view.camera.center for view in self.train + self.test]).reshape(-1, 3)

    @property
    def has_mono_depth(self):
        """True when every training view carries a monocular depth map"""
        return all(view.mono_depth is not None for view in self.train)
