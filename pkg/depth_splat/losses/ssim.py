"""Structural similarity with an 11x11 Gaussian window, and its gradient w.r.t. the first image.

Matches scikit-image's structural_similarity(gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
data_range=1.0): separable Gaussian filtering in "reflect" mode, population covariances, mean over the SSIM map with
a border of one window radius cropped away, channels averaged.
"""

import numpy as np
from scipy.ndimage import correlate1d

from depth_splat.constants import SSIM_DATA_RANGE, SSIM_K1, SSIM_K2, SSIM_WINDOW_RADIUS, SSIM_WINDOW_SIGMA
from depth_splat.errors import DimensionMismatchError
from depth_splat.render.buffers import ImageBuffer, guard_same_shape

C1 = (SSIM_K1 * SSIM_DATA_RANGE) ** 2
C2 = (SSIM_K2 * SSIM_DATA_RANGE) ** 2


def _window():
    offsets = np.arange(-SSIM_WINDOW_RADIUS, SSIM_WINDOW_RADIUS + 1)
    weights = np.exp(-0.5 * (offsets / SSIM_WINDOW_SIGMA) ** 2)
    return weights / weights.sum()


WINDOW = _window()
MIN_IMAGE_SIZE = 2 * SSIM_WINDOW_RADIUS + 1


def _filter(image):
    for axis in (0, 1):
        image = correlate1d(image, WINDOW, axis=axis, mode="reflect")
    return image


def _correlate1d_adjoint(values, axis):
    """Adjoint of correlate1d(..., mode="reflect") along one axis for the symmetric window"""
    radius = SSIM_WINDOW_RADIUS
    values = np.moveaxis(values, axis, 0)
    size = values.shape[0]
    padded = np.pad(values, [(radius, radius)] + [(0, 0)] * (values.ndim - 1))
    spread = correlate1d(padded, WINDOW, axis=0, mode="constant", cval=0.0)

    # Fold the mirrored border samples back onto the pixels they were copied from
    folded = spread[radius : radius + size].copy()
    folded[:radius] += spread[:radius][::-1]
    folded[size - radius :] += spread[radius + size :][::-1]
    return np.moveaxis(folded, 0, axis)


def _filter_adjoint(image):
    for axis in (1, 0):
        image = _correlate1d_adjoint(image, axis)
    return image


def _planes(image):
    """(height, width) or (height, width, channels) array as a list of float 2D planes"""
    values = image.rgb if isinstance(image, ImageBuffer) else np.asarray(image, dtype=float)
    if values.ndim == 2:
        values = values[..., None]
    if values.ndim != 3:
        raise DimensionMismatchError(f"SSIM expects a 2D or 3D image, got shape {values.shape}")
    if min(values.shape[:2]) < MIN_IMAGE_SIZE:
        raise DimensionMismatchError(
            f"SSIM needs images of at least {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE}, got {values.shape[:2]}"
        )
    return values


def _statistics(x, y):
    mean_x = _filter(x)
    mean_y = _filter(y)
    var_x = _filter(x * x) - mean_x**2
    var_y = _filter(y * y) - mean_y**2
    cov_xy = _filter(x * y) - mean_x * mean_y
    luminance = 2 * mean_x * mean_y + C1
    contrast = 2 * cov_xy + C2
    luminance_norm = mean_x**2 + mean_y**2 + C1
    contrast_norm = var_x + var_y + C2
    return mean_x, mean_y, luminance, contrast, luminance_norm, contrast_norm


def _interior(shape):
    radius = SSIM_WINDOW_RADIUS
    mask = np.zeros(shape)
    mask[radius:-radius, radius:-radius] = 1
    return mask / mask.sum()


def _plane_ssim(x, y, with_grad):
    mean_x, mean_y, luminance, contrast, luminance_norm, contrast_norm = _statistics(x, y)
    denominator = luminance_norm * contrast_norm
    ssim_map = luminance * contrast / denominator
    weights = _interior(x.shape)
    value = np.sum(weights * ssim_map)
    if not with_grad:
        return value, None

    # Partials of the SSIM map w.r.t. the filtered quantities filter(x), filter(x * x) and filter(x * y)
    d_mean_x = 2 * mean_y * (contrast - luminance) / denominator - ssim_map * (
        2 * mean_x / luminance_norm - 2 * mean_x / contrast_norm
    )
    d_mean_xx = -ssim_map / contrast_norm
    d_mean_xy = 2 * luminance / denominator

    grad = (
        _filter_adjoint(weights * d_mean_x)
        + 2 * x * _filter_adjoint(weights * d_mean_xx)
        + y * _filter_adjoint(weights * d_mean_xy)
    )
    return value, grad


def ssim(a, b):
    """Mean structural similarity of two images in [0, 1], averaged over channels.

    Args:
        a, b: ImageBuffers, or (height, width[, channels]) arrays of the same shape, at least 11 pixels on each side
    Returns:
        scalar in [-1, 1]
    """
    x = _planes(a)
    y = _planes(b)
    guard_same_shape(x, y, "SSIM images")
    return float(np.mean([_plane_ssim(x[..., c], y[..., c], with_grad=False)[0] for c in range(x.shape[-1])]))


def ssim_grad(a, b):
    """SSIM and its gradient w.r.t. the first image.

    Returns:
        (value, grad) with grad shaped like `a`'s pixel array
    """
    x = _planes(a)
    y = _planes(b)
    guard_same_shape(x, y, "SSIM images")
    channels = x.shape[-1]
    values = []
    grad = np.zeros_like(x)
    for c in range(channels):
        value, plane_grad = _plane_ssim(x[..., c], y[..., c], with_grad=True)
        values.append(value)
        grad[..., c] = plane_grad / channels

    original_shape = (a.rgb if isinstance(a, ImageBuffer) else np.asarray(a)).shape
    return float(np.mean(values)), grad.reshape(original_shape)
