"""Patch partitioning and the local / global depth normalizations.

Local normalization removes each patch's mean and divides by that patch's standard deviation; global normalization
removes each patch's mean but divides by the standard deviation of the whole depth map. Both are invariant under
d -> a d + b (a > 0) as long as the standard deviations dominate epsilon.
"""

from dataclasses import dataclass

import numpy as np

from depth_splat.constants import EPSILON_FLOOR, EPSILON_STD_FRACTION, PATCH_SIZE_RANGE_PX
from depth_splat.errors import DimensionMismatchError, ModeMismatchError, ValidationError
from depth_splat.render.buffers import DepthMap

LOCAL = "local"
GLOBAL = "global"


@dataclass
class PatchGrid:
    """A partition of a (height, width) image into row-major patches.

    Attributes:
        patch_size: nominal patch edge, pixels
        row_cuts, col_cuts: gridlines; patch (i, j) covers rows row_cuts[i]:row_cuts[i + 1] and columns
            col_cuts[j]:col_cuts[j + 1]. The last row / column of patches is ragged when p does not divide the size.
        labels: (height, width) index of the patch each pixel belongs to
    """

    patch_size: int
    row_cuts: np.ndarray
    col_cuts: np.ndarray
    labels: np.ndarray

    @property
    def shape(self):
        return self.labels.shape

    @property
    def count(self):
        return (len(self.row_cuts) - 1) * (len(self.col_cuts) - 1)

    @property
    def sizes(self):
        """Pixels per patch"""
        return np.bincount(self.labels.ravel(), minlength=self.count)

    @property
    def patches(self):
        """(row slice, column slice) per patch, row-major"""
        return [
            (slice(self.row_cuts[i], self.row_cuts[i + 1]), slice(self.col_cuts[j], self.col_cuts[j + 1]))
            for i in range(len(self.row_cuts) - 1)
            for j in range(len(self.col_cuts) - 1)
        ]

    def patch_mean(self, values):
        """Mean of `values` over each patch, broadcast back to every pixel"""
        sums = np.bincount(self.labels.ravel(), weights=values.ravel(), minlength=self.count)
        return (sums / self.sizes)[self.labels]

    def patch_sum(self, values):
        """Sum of `values` over each patch, one entry per patch"""
        return np.bincount(self.labels.ravel(), weights=values.ravel(), minlength=self.count)


def _gridlines(size, patch_size):
    # Gridlines, with the remainder kept as a ragged last patch
    cuts = np.arange(0, size, patch_size)
    return np.append(cuts, size)


def partition(width, height, p):
    """Tile a width x height image with p x p patches, row-major; right and bottom remainders form smaller patches.

    Raises:
        ValidationError: p < 2 or an empty image
    """
    if p < 2:
        raise ValidationError(f"Patch size must be at least 2 pixels, got {p}")
    if width < 1 or height < 1:
        raise ValidationError(f"Cannot partition a {width}x{height} image")
    row_cuts = _gridlines(height, p)
    col_cuts = _gridlines(width, p)
    patch_rows = np.searchsorted(row_cuts, np.arange(height), side="right") - 1
    patch_cols = np.searchsorted(col_cuts, np.arange(width), side="right") - 1
    labels = patch_rows[:, None] * (len(col_cuts) - 1) + patch_cols[None, :]
    return PatchGrid(patch_size=p, row_cuts=row_cuts, col_cuts=col_cuts, labels=labels)


def sample_patch_size(rng, patch_range=PATCH_SIZE_RANGE_PX):
    """Uniform integer patch size from the inclusive range [low, high]"""
    low, high = patch_range
    if low < 2 or high < low:
        raise ValidationError(f"Invalid patch size range {patch_range}")
    return int(rng.integers(low, high + 1))


@dataclass
class NormalizedDepth:
    values: np.ndarray  # (height, width), dimensionless
    mode: str  # LOCAL or GLOBAL


def _depth_values(depth):
    return depth.depth if isinstance(depth, DepthMap) else np.asarray(depth, dtype=float)


def _guard_grid_matches(values, grid):
    if values.shape != grid.shape:
        raise DimensionMismatchError(f"Depth map shape {values.shape} does not match patch grid shape {grid.shape}")


def default_epsilon(values):
    """Normalization epsilon tied to the scale of the whole depth map"""
    return EPSILON_STD_FRACTION * np.std(values) + EPSILON_FLOOR


def _epsilon_slope(values, epsilon):
    """d(epsilon)/d(values): zero for an explicit epsilon, otherwise through the global standard deviation"""
    if epsilon is not None:
        return np.zeros_like(values)
    std = np.std(values)
    if std == 0:
        return np.zeros_like(values)
    return EPSILON_STD_FRACTION * (values - values.mean()) / (values.size * std)


def _patch_std(values, grid):
    centered = values - grid.patch_mean(values)
    return np.sqrt(np.maximum(grid.patch_mean(centered**2), 0)), centered


def normalize_local(depth, grid, epsilon=None):
    """(d - mean(d over P)) / (std(d over P) + eps) for every patch P.

    Args:
        depth: DepthMap or (height, width) array
        grid: PatchGrid of the same shape
        epsilon: Optional explicit epsilon; defaults to default_epsilon of the whole map
    Returns:
        NormalizedDepth in LOCAL mode
    """
    values = _depth_values(depth)
    _guard_grid_matches(values, grid)
    epsilon = default_epsilon(values) if epsilon is None else epsilon
    std, centered = _patch_std(values, grid)
    return NormalizedDepth(values=centered / (std + epsilon), mode=LOCAL)


def normalize_local_backward(depth, grid, normalized_grads, epsilon=None):
    """Gradient w.r.t. the depth map, through the patch means, the patch standard deviations and epsilon"""
    values = _depth_values(depth)
    _guard_grid_matches(values, grid)
    explicit_epsilon = epsilon
    epsilon = default_epsilon(values) if epsilon is None else epsilon
    centered = values - grid.patch_mean(values)
    sizes = grid.sizes
    patch_std = np.sqrt(grid.patch_sum(centered**2) / sizes)
    inverse = 1 / (patch_std + epsilon)
    # dL/d(patch scale), one entry per patch
    scale_grads = -(inverse**2) * grid.patch_sum(normalized_grads * centered)

    direct = inverse[grid.labels] * (normalized_grads - grid.patch_mean(normalized_grads))
    pixel_std = patch_std[grid.labels]
    std_slope = np.divide(centered, sizes[grid.labels] * pixel_std, out=np.zeros_like(centered), where=pixel_std > 0)
    through_std = scale_grads[grid.labels] * std_slope
    return direct + through_std + np.sum(scale_grads) * _epsilon_slope(values, explicit_epsilon)


def normalize_global(depth, grid, epsilon=None):
    """(d - mean(d over P)) / (std(d over the whole image) + eps).

    Args:
        depth: DepthMap or (height, width) array
        grid: PatchGrid of the same shape
        epsilon: Optional explicit epsilon; defaults to default_epsilon of the whole map
    Returns:
        NormalizedDepth in GLOBAL mode
    """
    values = _depth_values(depth)
    _guard_grid_matches(values, grid)
    epsilon = default_epsilon(values) if epsilon is None else epsilon
    centered = values - grid.patch_mean(values)
    return NormalizedDepth(values=centered / (np.std(values) + epsilon), mode=GLOBAL)


def normalize_global_backward(depth, grid, normalized_grads, epsilon=None):
    """Gradient w.r.t. the depth map, through the patch means, the global standard deviation and epsilon"""
    values = _depth_values(depth)
    _guard_grid_matches(values, grid)
    explicit_epsilon = epsilon
    epsilon = default_epsilon(values) if epsilon is None else epsilon
    std = np.std(values)
    inverse = 1 / (std + epsilon)
    centered = values - grid.patch_mean(values)

    direct = inverse * (normalized_grads - grid.patch_mean(normalized_grads))
    scale_total = -(inverse**2) * np.sum(normalized_grads * centered)
    std_slope = (values - values.mean()) / (values.size * std) if std > 0 else np.zeros_like(values)
    return direct + scale_total * (std_slope + _epsilon_slope(values, explicit_epsilon))


def guard_same_mode(a, b):
    if a.mode != b.mode:
        raise ModeMismatchError(f"Cannot compare {a.mode} and {b.mode} normalized depths")
    if a.values.shape != b.values.shape:
        raise DimensionMismatchError(f"Normalized depths have shapes {a.values.shape} and {b.values.shape}")
