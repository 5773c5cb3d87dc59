"""Tolerant L2, depth regularization, color loss and the full training objective, each with its gradient."""

from dataclasses import dataclass

import numpy as np

from depth_splat.constants import (
    DSSIM_WEIGHT_LAMBDA,
    HARD_DEPTH_TAU,
    L2_TOLERANCE_DELTA,
    LOCAL_TERM_WEIGHT_GAMMA,
)
from depth_splat.errors import ValidationError
from depth_splat.losses.normalize import (
    guard_same_mode,
    normalize_global,
    normalize_global_backward,
    normalize_local,
    normalize_local_backward,
)
from depth_splat.losses.ssim import ssim, ssim_grad
from depth_splat.render.buffers import DepthMap, ImageBuffer, guard_same_shape


@dataclass(frozen=True)
class LossWeights:
    """Attributes:
    dssim: weight of the (1 - SSIM) term in the color loss
    local: weight of the local-normalization term in the depth regularization
    tolerance: L2 error band, normalized depth units
    tau: rendering opacity of the hard depth pass
    """

    dssim: float = DSSIM_WEIGHT_LAMBDA
    local: float = LOCAL_TERM_WEIGHT_GAMMA
    tolerance: float = L2_TOLERANCE_DELTA
    tau: float = HARD_DEPTH_TAU

    def __post_init__(self):
        for name in ("dssim", "local", "tolerance"):
            if getattr(self, name) < 0:
                raise ValidationError(f"Loss weight {name} must be >= 0, got {getattr(self, name)}")
        if not 0 < self.tau < 1:
            raise ValidationError(f"Hard depth opacity tau must be in (0, 1), got {self.tau}")


def tolerant_l2(a, b, delta):
    """mean(max(|a - b| - delta, 0) ** 2) over pixels of two NormalizedDepths of the same mode"""
    guard_same_mode(a, b)
    excess = np.maximum(np.abs(a.values - b.values) - delta, 0)
    return float(np.mean(excess**2))


def tolerant_l2_grad(a, b, delta):
    """tolerant_l2 and its gradient w.r.t. a.values"""
    guard_same_mode(a, b)
    difference = a.values - b.values
    excess = np.maximum(np.abs(difference) - delta, 0)
    grad = 2 * excess * np.sign(difference) / difference.size
    return float(np.mean(excess**2)), grad


def _guard_depth_pair(rendered, mono):
    guard_same_shape(_depth(rendered), _depth(mono), "depth maps")


def _depth(depth):
    return depth.depth if isinstance(depth, DepthMap) else np.asarray(depth, dtype=float)


def depth_regularization(rendered, mono, grid, weights=LossWeights(), epsilon=None, use_local=True, use_global=True):
    """Global-normalization tolerant L2 plus the local-normalization one weighted by weights.local.

    Each map is normalized with its own statistics. use_local / use_global switch the terms off for ablations.
    """
    return depth_regularization_grad(rendered, mono, grid, weights, epsilon, use_local, use_global)[0]


def depth_regularization_grad(
    rendered, mono, grid, weights=LossWeights(), epsilon=None, use_local=True, use_global=True
):
    """depth_regularization and its gradient w.r.t. the rendered depth, chained through the normalization
    statistics. The monocular map is a constant.

    Returns:
        (value, (height, width) gradient)
    """
    _guard_depth_pair(rendered, mono)
    rendered_depth = _depth(rendered)
    value = 0.0
    grad = np.zeros_like(rendered_depth)

    if use_global:
        term, normalized_grads = tolerant_l2_grad(
            normalize_global(rendered_depth, grid, epsilon), normalize_global(mono, grid, epsilon), weights.tolerance
        )
        value += term
        grad += normalize_global_backward(rendered_depth, grid, normalized_grads, epsilon)

    if use_local:
        term, normalized_grads = tolerant_l2_grad(
            normalize_local(rendered_depth, grid, epsilon), normalize_local(mono, grid, epsilon), weights.tolerance
        )
        value += weights.local * term
        grad += weights.local * normalize_local_backward(rendered_depth, grid, normalized_grads, epsilon)

    return value, grad


def _rgb(image):
    return image.rgb if isinstance(image, ImageBuffer) else np.asarray(image, dtype=float)


def color_loss(rendered, gt, dssim_weight=DSSIM_WEIGHT_LAMBDA):
    """mean|rendered - gt| + dssim_weight * (1 - ssim(rendered, gt))"""
    rendered_rgb = _rgb(rendered)
    gt_rgb = _rgb(gt)
    guard_same_shape(rendered_rgb, gt_rgb, "color images")
    value = float(np.mean(np.abs(rendered_rgb - gt_rgb)))
    if dssim_weight:
        value += dssim_weight * (1 - ssim(rendered_rgb, gt_rgb))
    return value


def color_loss_grad(rendered, gt, dssim_weight=DSSIM_WEIGHT_LAMBDA):
    """color_loss and its gradient w.r.t. the rendered image.

    Returns:
        (value, (height, width, 3) gradient)
    """
    rendered_rgb = _rgb(rendered)
    gt_rgb = _rgb(gt)
    guard_same_shape(rendered_rgb, gt_rgb, "color images")
    difference = rendered_rgb - gt_rgb
    value = float(np.mean(np.abs(difference)))
    grad = np.sign(difference) / difference.size
    if dssim_weight:
        similarity, similarity_grad = ssim_grad(rendered_rgb, gt_rgb)
        value += dssim_weight * (1 - similarity)
        grad = grad - dssim_weight * similarity_grad
    return value, grad


def total_loss(color, r_hard, r_soft, soft_active=True):
    """Unit-weight sum of the color loss and the two depth regularizers.

    Args:
        soft_active: False before the soft depth term is switched on; r_soft is then ignored
    """
    components = {"color": color, "hard": r_hard, "soft": r_soft}
    for name, component in components.items():
        if component < 0:
            raise ValidationError(f"Loss component {name} must be >= 0, got {component}")
    return color + r_hard + (r_soft if soft_active else 0.0)
