"""Adaptive density control: clone small active primitives, split large ones, prune transparent ones."""

import logging
from dataclasses import dataclass

import numpy as np

from depth_splat.field.primitives import PARAMETER_GROUPS, GaussianField, rotation_matrices

logger = logging.getLogger(__name__)

SPLIT_CHILDREN = 2


@dataclass
class DensifyStats:
    """Per-primitive sum of screen-space position gradient norms, and the number of steps it was visible"""

    grad_norm_sum: np.ndarray
    counts: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(grad_norm_sum=np.zeros(n), counts=np.zeros(n, dtype=int))

    def __len__(self):
        return len(self.counts)

    def accumulate(self, mean2d_grads, visible):
        """Add the norms of (N, 2) screen gradients of the visible primitives"""
        visible = np.asarray(visible, dtype=bool)
        self.grad_norm_sum[visible] += np.linalg.norm(mean2d_grads[visible], axis=-1)
        self.counts[visible] += 1

    def mean_grad_norms(self):
        return np.divide(self.grad_norm_sum, self.counts, out=np.zeros_like(self.grad_norm_sum), where=self.counts > 0)


@dataclass(frozen=True)
class DensifySummary:
    cloned: int
    split: int
    pruned: int
    primitives: int


def _sampled_offsets(field, indices, rng):
    """One offset per listed primitive, drawn from that primitive's own Gaussian"""
    if len(indices) == 0:
        return np.zeros((0, 3))
    local = rng.normal(size=(len(indices), 3)) * field.scales[indices]
    return np.einsum("nij,nj->ni", rotation_matrices(field.rotations[indices]), local)


def densify_and_prune(field, stats, optimizer, config, extent, rng):
    """Clone, split and prune `field` according to accumulated statistics.

    Primitives whose mean screen gradient norm exceeds config.densify_grad_threshold are cloned when their largest
    scale is at most config.clone_extent_fraction * extent (the copy is shifted by an offset sampled from the
    primitive's Gaussian) and split otherwise (two children sampled the same way, scales divided by
    config.split_scale_divisor, the parent removed). Then every primitive with opacity below config.prune_opacity is
    removed. Optimizer moments follow the rows; new primitives start with zero moments.

    Args:
        field: GaussianField
        stats: DensifyStats with one row per primitive
        optimizer: Adam holding moments keyed by parameter group
        config: TrainConfig
        extent: scene extent, world units
        rng: np.random.Generator for the offsets
    Returns:
        (new GaussianField, DensifySummary); the caller resets the stats
    """
    active = stats.mean_grad_norms() > config.densify_grad_threshold
    large = field.scales.max(axis=1) > config.clone_extent_fraction * extent
    clone_indices = np.flatnonzero(active & ~large)
    split_indices = np.flatnonzero(active & large)
    kept_indices = np.flatnonzero(~(active & large))

    children = np.repeat(split_indices, SPLIT_CHILDREN)
    sources = np.concatenate([kept_indices, clone_indices, children])
    fresh = np.arange(len(sources)) >= len(kept_indices)

    centers = field.centers[sources]
    log_scales = field.log_scales[sources]
    clone_rows = slice(len(kept_indices), len(kept_indices) + len(clone_indices))
    child_rows = slice(clone_rows.stop, len(sources))
    centers[clone_rows] += _sampled_offsets(field, clone_indices, rng)
    centers[child_rows] += _sampled_offsets(field, children, rng)
    log_scales[child_rows] -= np.log(config.split_scale_divisor)

    keep = field.opacities[sources] >= config.prune_opacity
    densified = GaussianField(
        centers=centers[keep],
        log_scales=log_scales[keep],
        rotations=field.rotations[sources][keep],
        opacity_logits=field.opacity_logits[sources][keep],
        color_params=field.color_params[sources][keep],
        color_mode=field.color_mode,
        version=field.version + 1,
    )
    optimizer.remap_rows(PARAMETER_GROUPS, sources[keep], fresh[keep])

    summary = DensifySummary(
        cloned=len(clone_indices),
        split=len(split_indices),
        pruned=int(np.count_nonzero(~keep)),
        primitives=len(densified),
    )
    logger.debug("Densified: %s", summary)
    if len(densified) == 0:
        logger.warning("Pruning removed every primitive")
    return densified, summary
