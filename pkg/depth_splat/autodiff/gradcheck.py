"""Central finite-difference verification of the analytic render gradients."""

import logging
from dataclasses import dataclass
from typing import Dict

import numpy as np
import pandas as pd

from depth_splat.autodiff.vjp import default_freeze_mask, vjp_render
from depth_splat.color.hash_grid import SparseTableGrad
from depth_splat.color.model import make_color_model
from depth_splat.errors import ValidationError
from depth_splat.field.primitives import GROUP_ATTRIBUTES, PARAMETER_GROUPS
from depth_splat.field.projection import gaussian_weights, project_field
from depth_splat.render.rasterizer import COLOR, EXACT_SETTINGS, rasterize

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5
ABSOLUTE_FLOOR = 1e-7


def identity_loss(output):
    """Sum of every rendered value"""
    return float(np.sum(output)), np.ones_like(output)


def weighted_sum_loss(weights):
    """<weights, render>; a random `weights` array exercises every pixel with a different cotangent"""
    weights = np.asarray(weights, dtype=float)

    def loss(output):
        return float(np.sum(weights.reshape(output.shape) * output)), weights.reshape(output.shape)

    return loss


@dataclass
class GradCheckReport:
    """Worst-case disagreement between analytic and central-difference gradients, per parameter group.

    Attributes:
        step: finite-difference step h
        max_rel_error: group -> max |analytic - numeric| / max(|analytic|, |numeric|) over entries whose absolute
            error exceeds the absolute floor
        max_abs_error: group -> max |analytic - numeric|
        skipped: group -> entries not checked because +-h crossed a support, clamp or skip boundary
    """

    step: float
    max_rel_error: Dict[str, float]
    max_abs_error: Dict[str, float]
    skipped: Dict[str, int]

    def passed(self, rtol=1e-4):
        return all(error <= rtol for error in self.max_rel_error.values())

    def to_frame(self):
        return pd.DataFrame(
            {"max_rel_error": self.max_rel_error, "max_abs_error": self.max_abs_error, "skipped": self.skipped}
        ).rename_axis("group")


def _errors(analytic, numeric, absolute_floor):
    absolute = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    relative = np.where(absolute > absolute_floor, absolute / np.where(scale > 0, scale, 1), 0.0)
    return (float(relative.max()) if relative.size else 0.0), (float(absolute.max()) if absolute.size else 0.0)


def _kink_signature(field, camera, settings):
    """Which (primitive, pixel) pairs are inside the support, clamped or skipped. Central differences are only
    meaningful when this does not change between x - h and x + h.
    """
    projections = project_field(field, camera, settings.dilation)
    pixels = camera.pixel_centers().reshape(-1, 2)
    offsets = pixels[None, :, :] - projections.mean2d[:, None, :]
    covered = projections.visible[:, None] & (np.sum(offsets**2, axis=-1) <= projections.radius[:, None] ** 2)
    weights, _ = gaussian_weights(projections.mean2d, projections.conic, projections.radius, pixels)
    alpha = field.opacities[:, None] * weights
    return np.concatenate([covered, covered & (alpha > settings.alpha_max), covered & (alpha < settings.min_alpha)])


def _render_loss(kind, field, camera, loss, color_model, settings):
    colors = color_model.colors(field, camera) if kind.name == "color" else None
    return loss(rasterize(kind, field, camera, colors, settings).output)[0]


def finite_diff_check(
    field,
    camera,
    kind,
    loss=identity_loss,
    h=DEFAULT_STEP,
    mask=None,
    color_model=None,
    settings=EXACT_SETTINGS,
    absolute_floor=ABSOLUTE_FLOOR,
):
    """Compare vjp_render against central differences (f(x + h) - f(x - h)) / 2h for every scalar parameter.

    Frozen groups are not perturbed: their numeric gradient is defined as zero, and the analytic one must be exactly
    zero.

    Args:
        field: small GaussianField (every parameter is perturbed)
        camera: Camera
        kind: RenderKind
        loss: callable render output -> (value, gradient w.r.t. output)
        h: step
        mask: Optional FreezeMask, defaults to the kind's default
        color_model: Optional color model for color renders
        settings: Optional RasterSettings; defaults to no skipping and no early termination
    Returns:
        GradCheckReport
    """
    if not h > 0:
        raise ValidationError(f"Finite-difference step must be positive, got {h}")
    mask = default_freeze_mask(kind) if mask is None else mask
    color_model = color_model or make_color_model(field.color_mode)

    colors = color_model.colors(field, camera) if kind.name == "color" else None
    _, output_grads = loss(rasterize(kind, field, camera, colors, settings).output)
    analytic = vjp_render(kind, field, camera, output_grads, mask, color_model, settings)

    report = GradCheckReport(step=h, max_rel_error={}, max_abs_error={}, skipped={})
    for group in PARAMETER_GROUPS:
        analytic_group = analytic.group(group)
        numeric = np.zeros_like(analytic_group)
        checked = np.ones(analytic_group.shape, dtype=bool)
        if mask.is_frozen(group):
            if np.any(analytic_group != 0):
                report.max_rel_error[group] = np.inf
                report.max_abs_error[group] = float(np.abs(analytic_group).max())
                report.skipped[group] = 0
                continue
        else:
            attribute = GROUP_ATTRIBUTES[group]
            for index in np.ndindex(analytic_group.shape):
                bumped = []
                for sign in (1, -1):
                    perturbed = field.copy()
                    getattr(perturbed, attribute)[index] += sign * h
                    perturbed.bump_version()
                    bumped.append(perturbed)
                if not np.array_equal(
                    _kink_signature(bumped[0], camera, settings), _kink_signature(bumped[1], camera, settings)
                ):
                    checked[index] = False
                    continue
                up, down = (_render_loss(kind, f, camera, loss, color_model, settings) for f in bumped)
                numeric[index] = (up - down) / (2 * h)

        relative, absolute = _errors(analytic_group[checked], numeric[checked], absolute_floor)
        report.max_rel_error[group] = relative
        report.max_abs_error[group] = absolute
        report.skipped[group] = int(np.count_nonzero(~checked))

    logger.debug("Gradient check for %s:\n%s", kind, report.to_frame())
    return report


def check_model_gradients(
    field,
    camera,
    color_model,
    loss=identity_loss,
    h=DEFAULT_STEP,
    entries_per_parameter=6,
    seed=0,
    settings=EXACT_SETTINGS,
    absolute_floor=ABSOLUTE_FLOOR,
):
    """Central-difference check of color-model weight gradients on a random sample of entries per weight array.

    Hash-table entries are sampled among the rows the render actually touches.

    Returns:
        GradCheckReport keyed by model parameter name
    """
    _, output_grads = loss(_color_output(field, camera, color_model, settings))
    analytic = vjp_render(COLOR, field, camera, output_grads, color_model=color_model, settings=settings)
    rng = np.random.default_rng(seed)

    report = GradCheckReport(step=h, max_rel_error={}, max_abs_error={}, skipped={})
    for name, weights in color_model.parameters().items():
        grad = analytic.model[name]
        if isinstance(grad, SparseTableGrad):
            dense = grad.to_dense(weights.shape).reshape(-1)
            flat_rows = rng.choice(grad.rows, size=min(entries_per_parameter, len(grad.rows)), replace=False)
            flat_entries = flat_rows * weights.shape[-1] + rng.integers(0, weights.shape[-1], size=len(flat_rows))
        else:
            dense = grad.reshape(-1)
            flat_entries = rng.choice(weights.size, size=min(entries_per_parameter, weights.size), replace=False)

        numeric = np.zeros(len(flat_entries))
        flat_weights = weights.reshape(-1)
        for position, entry in enumerate(flat_entries):
            values = []
            for sign in (1, -1):
                original = flat_weights[entry]
                flat_weights[entry] = original + sign * h
                color_model.bump_version()
                values.append(loss(_color_output(field, camera, color_model, settings))[0])
                flat_weights[entry] = original
            color_model.bump_version()
            numeric[position] = (values[0] - values[1]) / (2 * h)

        relative, absolute = _errors(dense[flat_entries], numeric, absolute_floor)
        report.max_rel_error[name] = relative
        report.max_abs_error[name] = absolute
        report.skipped[name] = 0
    return report


def _color_output(field, camera, color_model, settings):
    return rasterize(COLOR, field, camera, color_model.colors(field, camera), settings).output
