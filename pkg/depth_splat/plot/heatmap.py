import numpy as np
import plotly.graph_objs as go
import plotly.figure_factory as ff

from depth_splat.constants import DEPTH_METRIC_MIN_ACCUM_ALPHA
from depth_splat.errors import DimensionMismatchError
from depth_splat.render.buffers import guard_same_shape


def _blocks(array, block_shape):
    """(block rows, block columns, block height * block width) view of the whole blocks of a 2D array"""
    array = np.asarray(array, dtype=float)
    if array.ndim != 2:
        raise DimensionMismatchError(f"Expected a 2D array, got shape {array.shape}")
    block_height, block_width = block_shape
    rows, columns = array.shape[0] // block_height, array.shape[1] // block_width
    cropped = array[: rows * block_height, : columns * block_width]
    return cropped.reshape(rows, block_height, columns, block_width).swapaxes(1, 2).reshape(rows, columns, -1)


def block_means(array, block_shape):
    """Mean of the finite entries in each `block_shape` block of a 2D array.

    Partial blocks at the right and bottom edges are dropped. Non-finite entries (uncovered pixels in a depth error
    map) are left out of their block's mean; a block with no finite entry is NaN.

    Returns:
        (block rows, block columns) array
    """
    blocks = _blocks(array, block_shape)
    finite = np.isfinite(blocks)
    counts = finite.sum(axis=-1)
    sums = np.where(finite, blocks, 0).sum(axis=-1)
    return np.divide(sums, counts, out=np.full(counts.shape, np.nan), where=counts > 0)


def block_coverage(array, block_shape):
    """Fraction of finite entries in each block, laid out like block_means"""
    return np.isfinite(_blocks(array, block_shape)).mean(axis=-1)


def depth_error_map(rendered, gt, min_accum_alpha=DEPTH_METRIC_MIN_ACCUM_ALPHA):
    """Per-pixel absolute depth error between two DepthMaps; NaN wherever either map's coverage is too low"""
    guard_same_shape(rendered.depth, gt.depth, "depth maps")
    covered = (rendered.accum_alpha > min_accum_alpha) & (gt.accum_alpha > min_accum_alpha)
    return np.where(covered, np.abs(rendered.depth - gt.depth), np.nan)


def display_heatmap(array, display_decimals=2, title="Heatmap"):
    """Builds an annotated heatmap figure from a 2D array; image row 0 is drawn at the top"""
    heatmap = ff.create_annotated_heatmap(array, annotation_text=np.round(array, display_decimals))
    heatmap.layout.yaxis.autorange = "reversed"
    heatmap.layout.title = title
    return go.Figure(heatmap)


def heatmapify(array, block_shape=(8, 8), display_decimals=2, title="Heatmap"):
    """Heatmap of `array` averaged over blocks of `block_shape`; partial blocks at the right and bottom edges are
    dropped.
    """
    return display_heatmap(block_means(array, block_shape), display_decimals, title)


def depth_error_heatmap(
    rendered, gt, block_shape=(8, 8), min_block_coverage=0.0, display_decimals=2, title="Depth error"
):
    """Block-averaged absolute depth error of a rendered view against its ground truth.

    Args:
        rendered, gt: DepthMaps of the same view
        block_shape: Optional (default=(8, 8)). Pixel block to average over
        min_block_coverage: Optional. Blocks with a smaller fraction of covered pixels show NaN
        display_decimals: Optional. Decimals in the cell annotations
        title: Optional
    Returns:
        plotly Figure. Blocks with no covered pixel always show NaN.
    """
    errors = depth_error_map(rendered, gt)
    means = block_means(errors, block_shape)
    means[block_coverage(errors, block_shape) < min_block_coverage] = np.nan
    return display_heatmap(means, display_decimals, title)
