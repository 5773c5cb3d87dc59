"""Reverse-mode gradients of renders w.r.t. primitive parameters, with per-group freezing.

vjp_render(kind, field, camera, upstream) returns the gradient of <upstream, render(kind)>. The chain is
    rasterizer backward (screen quantities, opacities, colors or distances)
    -> projection backward (centers, log scales, rotations)
    -> color model backward (color parameters, centers, model weights)
and frozen groups are replaced by exact zeros at the end.
"""

from dataclasses import dataclass, field as dataclass_field
from typing import Dict

import numpy as np

from depth_splat.color.hash_grid import SparseTableGrad
from depth_splat.color.model import make_color_model
from depth_splat.errors import DimensionMismatchError
from depth_splat.field.primitives import (
    HARD_DEPTH_FREEZE,
    NO_FREEZE,
    PARAMETER_GROUPS,
    SOFT_DEPTH_FREEZE,
)
from depth_splat.field.projection import project_field_backward
from depth_splat.render.rasterizer import DEFAULT_SETTINGS, rasterize, rasterize_backward


@dataclass
class ParamGrads:
    """Gradients for every parameter group of a field, plus screen-space and color-model extras.

    Attributes:
        center, scale, rotation, opacity, color: per-primitive gradients shaped like the field's arrays (scale is
            w.r.t. log scales, opacity w.r.t. opacity logits)
        mean2d: (N, 2) gradient w.r.t. projected means, unmasked; feeds densification statistics
        model: name -> gradient of color-model weights (neural mode)
    """

    center: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    mean2d: np.ndarray
    model: Dict[str, object] = dataclass_field(default_factory=dict)

    @classmethod
    def zeros_like(cls, field):
        return cls(
            **{group: np.zeros_like(field.parameter(group)) for group in PARAMETER_GROUPS},
            mean2d=np.zeros((len(field), 2)),
        )

    def group(self, name):
        return getattr(self, name)

    def masked(self, mask):
        """Copy with every frozen group replaced by zeros. A frozen color group also drops model gradients."""
        arrays = {
            group: np.zeros_like(self.group(group)) if mask.is_frozen(group) else self.group(group)
            for group in PARAMETER_GROUPS
        }
        return ParamGrads(**arrays, mean2d=self.mean2d, model={} if mask.color else dict(self.model))

    def scaled(self, factor):
        return ParamGrads(
            **{group: self.group(group) * factor for group in PARAMETER_GROUPS},
            mean2d=self.mean2d * factor,
            model={name: _scale(grad, factor) for name, grad in self.model.items()},
        )

    def __add__(self, other):
        model = dict(self.model)
        for name, grad in other.model.items():
            model[name] = model[name] + grad if name in model else grad
        return ParamGrads(
            **{group: self.group(group) + other.group(group) for group in PARAMETER_GROUPS},
            mean2d=self.mean2d + other.mean2d,
            model=model,
        )

    def is_finite(self):
        arrays = [self.group(group) for group in PARAMETER_GROUPS]
        arrays += [grad.values if isinstance(grad, SparseTableGrad) else grad for grad in self.model.values()]
        return all(np.all(np.isfinite(array)) for array in arrays)


def _scale(grad, factor):
    return grad.scaled(factor) if isinstance(grad, SparseTableGrad) else grad * factor


def default_freeze_mask(kind):
    """Hard depth trains centers only; soft depth trains opacities only; color and plain depth train everything"""
    if kind.name == "hard_depth":
        return HARD_DEPTH_FREEZE
    if kind.name == "soft_depth":
        return SOFT_DEPTH_FREEZE
    return NO_FREEZE


def _guard_upstream(frame, upstream):
    upstream = np.asarray(upstream, dtype=float)
    expected = frame.output.shape
    if upstream.shape != expected and not (expected[-1] == 1 and upstream.shape == expected[:-1]):
        raise DimensionMismatchError(f"Upstream gradient shape {upstream.shape} does not match render shape {expected}")
    return upstream


def vjp_frame(frame, upstream, mask=None, color_model=None):
    """Gradients of <upstream, frame.output> for a frame already produced by `rasterize`.

    Args:
        frame: RasterFrame
        upstream: (H, W, 3) for color, (H, W) or (H, W, 1) for depth kinds
        mask: Optional FreezeMask; defaults to default_freeze_mask(frame.kind)
        color_model: the model that produced the frame's colors (color renders only)
    Returns:
        ParamGrads
    """
    upstream = _guard_upstream(frame, upstream)
    mask = default_freeze_mask(frame.kind) if mask is None else mask
    field, camera, kind = frame.field, frame.camera, frame.kind

    screen = rasterize_backward(frame, upstream)
    distance_grads = screen.values[:, 0] if kind.is_depth else np.zeros(len(field))
    center, scale, rotation = project_field_backward(
        field, camera, frame.projections, screen.mean2d, screen.conic, distance_grads
    )

    opacities = field.opacities
    if kind.name == "hard_depth":
        # tau replaces the learned opacity
        opacity = np.zeros(len(field))
    else:
        opacity = screen.opacity * opacities * (1 - opacities)

    color = np.zeros_like(field.color_params)
    model = {}
    if kind.name == "color" and not (mask.color and mask.center):
        color_model = color_model or make_color_model(field.color_mode)
        color_grads = color_model.backward(field, camera, screen.values)
        color = color_grads.color_params
        center = center + color_grads.centers
        model = color_grads.model

    grads = ParamGrads(
        center=center, scale=scale, rotation=rotation, opacity=opacity, color=color, mean2d=screen.mean2d, model=model
    )
    return grads.masked(mask)


def vjp_render(kind, field, camera, upstream, mask=None, color_model=None, settings=DEFAULT_SETTINGS):
    """Gradients of <upstream, render(kind)> w.r.t. every unfrozen parameter group.

    Args:
        kind: RenderKind
        field: GaussianField
        camera: Camera
        upstream: per-pixel cotangent with the render's shape
        mask: Optional FreezeMask; defaults to default_freeze_mask(kind)
        color_model: Optional color model for color renders; defaults to SH of the field's degree
        settings: Optional RasterSettings
    Returns:
        ParamGrads; frozen groups are exactly zero
    Raises:
        DimensionMismatchError: upstream does not match the render size
    """
    colors = None
    if kind.name == "color":
        color_model = color_model or make_color_model(field.color_mode)
        colors = color_model.colors(field, camera)
    frame = rasterize(kind, field, camera, colors, settings)
    return vjp_frame(frame, upstream, mask, color_model)
