"""Held-out image and depth metrics of a trained field."""

import logging
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from depth_splat.constants import DEPTH_METRIC_MIN_ACCUM_ALPHA, PSNR_CAP_DB
from depth_splat.losses.ssim import ssim
from depth_splat.render.buffers import DepthMap, ImageBuffer, guard_same_shape
from depth_splat.render.rasterizer import DEFAULT_SETTINGS, render_color, render_depth

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["psnr", "ssim", "depth_mae", "depth_rmse"]
AGGREGATE_ROW = "mean"


@dataclass(frozen=True)
class Metrics:
    """Attributes:
    psnr: dB, capped at PSNR_CAP_DB for identical images
    ssim: in [-1, 1]
    depth_mae, depth_rmse: world units over pixels both maps cover; NaN without ground truth or coverage
    """

    psnr: float
    ssim: float
    depth_mae: float = np.nan
    depth_rmse: float = np.nan


def psnr(rendered, gt, cap=PSNR_CAP_DB):
    """-10 log10(MSE) for images in [0, 1]"""
    rendered_rgb = rendered.rgb if isinstance(rendered, ImageBuffer) else np.asarray(rendered, dtype=float)
    gt_rgb = gt.rgb if isinstance(gt, ImageBuffer) else np.asarray(gt, dtype=float)
    guard_same_shape(rendered_rgb, gt_rgb, "images")
    mse = np.mean((rendered_rgb - gt_rgb) ** 2)
    if mse == 0:
        return cap
    return float(min(-10 * np.log10(mse), cap))


def depth_errors(rendered: DepthMap, gt: DepthMap, min_accum_alpha=DEPTH_METRIC_MIN_ACCUM_ALPHA):
    """Mean absolute and root mean square depth error over pixels where both maps have accum_alpha above
    `min_accum_alpha`.

    Returns:
        (mae, rmse); both NaN when no pixel qualifies
    """
    guard_same_shape(rendered.depth, gt.depth, "depth maps")
    covered = (rendered.accum_alpha > min_accum_alpha) & (gt.accum_alpha > min_accum_alpha)
    if not np.any(covered):
        return np.nan, np.nan
    errors = rendered.depth[covered] - gt.depth[covered]
    return float(np.mean(np.abs(errors))), float(np.sqrt(np.mean(errors**2)))


def render_view(field, camera, color_model, settings=DEFAULT_SETTINGS):
    """(ImageBuffer, expected DepthMap) of `field` seen from `camera`"""
    image = render_color(field, camera, color_model.colors(field, camera), settings)
    return image, render_depth(field, camera, settings)


def evaluate_view(field, view, color_model, settings=DEFAULT_SETTINGS):
    image, depth = render_view(field, view.camera, color_model, settings)
    metrics = {"psnr": psnr(image, view.image), "ssim": ssim(image, view.image)}
    if view.gt_depth is not None:
        metrics["depth_mae"], metrics["depth_rmse"] = depth_errors(depth, view.gt_depth)
    return Metrics(**metrics)


def evaluate(field, dataset, color_model, settings=DEFAULT_SETTINGS, split="test"):
    """Metrics of every view in a dataset split, plus their mean.

    Args:
        field: GaussianField
        dataset: Dataset
        color_model: color model matching the field's color mode
        settings: Optional RasterSettings
        split: Optional "test" (default) or "train"
    Returns:
        pandas.DataFrame indexed by view name with METRIC_COLUMNS, and a final AGGREGATE_ROW averaging each column
        over the views where it is defined
    """
    views = dataset.test if split == "test" else dataset.train
    rows = [asdict(evaluate_view(field, view, color_model, settings)) for view in views]
    table = pd.DataFrame(rows, index=[view.name for view in views], columns=METRIC_COLUMNS, dtype=float)
    table.loc[AGGREGATE_ROW] = table.mean()
    table.index.name = "view"
    logger.debug("Evaluation on %d %s views:\n%s", len(views), split, table)
    return table
