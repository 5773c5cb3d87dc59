"""Raster planes produced by the rasterizer and consumed by losses, metrics and exporters."""

from dataclasses import dataclass

import numpy as np

from depth_splat.errors import DimensionMismatchError


@dataclass
class ImageBuffer:
    """(height, width, 3) RGB image with values in [0, 1]"""

    rgb: np.ndarray

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=float)
        if self.rgb.ndim != 3 or self.rgb.shape[-1] != 3:
            raise DimensionMismatchError(f"RGB image must have shape (height, width, 3), got {self.rgb.shape}")

    @property
    def height(self):
        return self.rgb.shape[0]

    @property
    def width(self):
        return self.rgb.shape[1]

    @classmethod
    def filled(cls, width, height, color):
        return cls(np.broadcast_to(np.asarray(color, dtype=float), (height, width, 3)).copy())


@dataclass
class DepthMap:
    """Per-pixel depth (distance to the camera center, world units) and accumulated alpha in [0, 1].

    Monocular and ground-truth depth maps loaded from disk carry an all-ones accum_alpha.
    """

    depth: np.ndarray
    accum_alpha: np.ndarray = None

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=float)
        if self.depth.ndim != 2:
            raise DimensionMismatchError(f"Depth map must be 2D, got shape {self.depth.shape}")
        if self.accum_alpha is None:
            self.accum_alpha = np.ones_like(self.depth)
        self.accum_alpha = np.asarray(self.accum_alpha, dtype=float)
        if self.accum_alpha.shape != self.depth.shape:
            raise DimensionMismatchError(
                f"accum_alpha shape {self.accum_alpha.shape} does not match depth shape {self.depth.shape}"
            )

    @property
    def height(self):
        return self.depth.shape[0]

    @property
    def width(self):
        return self.depth.shape[1]


def guard_same_shape(a, b, what="arrays"):
    a_shape = np.shape(a)
    b_shape = np.shape(b)
    if a_shape != b_shape:
        raise DimensionMismatchError(f"{what} have mismatched shapes {a_shape} and {b_shape}")
