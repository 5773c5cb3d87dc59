"""Export fields as PLY point clouds, images as PNG and depth maps as PFM.

PLY vertex properties (binary little-endian):
    x, y, z                      float, center
    red, green, blue             uchar, color seen along +z
    opacity                      float, activated opacity in [0, 1]
    scale_0, scale_1, scale_2    float, activated per-axis scales
    rot_0 .. rot_3               float, quaternion (w, x, y, z)
    color_0 .. color_{K-1}       float, raw SH coefficients (SH fields only)
A "color_mode <mode>" comment records the field's color mode.
"""

import logging
from pathlib import Path

import numpy as np
from plyfile import PlyData, PlyElement
from scipy.special import logit

from depth_splat.color.sh import rgb_to_sh, sh_basis, sh_eval
from depth_splat.dataset.files import write_pfm, write_png
from depth_splat.errors import DatasetFormatError, ValidationError
from depth_splat.field.primitives import ColorMode, GaussianField
from depth_splat.render.buffers import DepthMap, ImageBuffer

logger = logging.getLogger(__name__)

CANONICAL_DIRECTION = np.array([0.0, 0.0, 1.0])
COLOR_MODE_COMMENT = "color_mode"
# Opacities are clipped into the open interval before taking the logit on import
_OPACITY_CLIP = 1e-7


def canonical_colors(field, color_model=None):
    """(N, 3) rgb of every primitive seen along CANONICAL_DIRECTION; mid-gray for neural fields without a model"""
    directions = np.tile(CANONICAL_DIRECTION, (len(field), 1))
    if field.color_mode.kind == "sh":
        degree = field.color_mode.sh_degree
        return sh_eval(field.color_params.reshape(len(field), (degree + 1) ** 2, 3), directions)
    if color_model is None or len(field) == 0:
        return np.full((len(field), 3), 0.5)
    return color_model.mlp.rgb(color_model.features(field), sh_basis(directions, color_model.direction_degree))


def _vertex_dtype(color_dim):
    properties = [(axis, "<f4") for axis in ("x", "y", "z")]
    properties += [(channel, "u1") for channel in ("red", "green", "blue")]
    properties += [("opacity", "<f4")]
    properties += [(f"scale_{axis}", "<f4") for axis in range(3)]
    properties += [(f"rot_{component}", "<f4") for component in range(4)]
    properties += [(f"color_{index}", "<f4") for index in range(color_dim)]
    return properties


def write_ply(path, field, color_model=None):
    """Write `field` as a binary little-endian PLY point cloud; an empty field gives a PLY with 0 vertices"""
    rgb = np.round(np.clip(canonical_colors(field, color_model), 0, 1) * 255).astype(np.uint8)
    vertices = np.empty(len(field), dtype=_vertex_dtype(field.color_mode.feature_dim))
    for axis, name in enumerate(("x", "y", "z")):
        vertices[name] = field.centers[:, axis]
    for channel, name in enumerate(("red", "green", "blue")):
        vertices[name] = rgb[:, channel]
    vertices["opacity"] = field.opacities
    for axis in range(3):
        vertices[f"scale_{axis}"] = field.scales[:, axis]
    for component in range(4):
        vertices[f"rot_{component}"] = field.rotations[:, component]
    for index in range(field.color_mode.feature_dim):
        vertices[f"color_{index}"] = field.color_params[:, index]

    ply = PlyData(
        [PlyElement.describe(vertices, "vertex")], byte_order="<", comments=[f"{COLOR_MODE_COMMENT} {field.color_mode}"]
    )
    try:
        ply.write(str(path))
    except OSError as error:
        raise OSError(f"Could not write PLY {path}: {error}") from error
    logger.debug("Wrote %d primitives to %s", len(field), path)


def _color_mode_from_comments(comments):
    for comment in comments:
        if comment.startswith(COLOR_MODE_COMMENT + " "):
            return ColorMode.parse(comment[len(COLOR_MODE_COMMENT) + 1 :])
    return None


def read_ply(path):
    """GaussianField from a PLY written by write_ply.

    Fields without raw SH coefficients (neural fields, or PLYs from elsewhere) come back as SH degree 0 fields whose
    color is the stored rgb.
    """
    try:
        ply = PlyData.read(str(path))
    except FileNotFoundError:
        raise DatasetFormatError(f"PLY file {path} does not exist")
    vertices = ply["vertex"].data
    names = vertices.dtype.names

    color_mode = _color_mode_from_comments(ply.comments)
    color_names = sorted((name for name in names if name.startswith("color_")), key=lambda name: int(name[6:]))
    if color_mode is None or color_mode.kind != "sh" or len(color_names) != color_mode.feature_dim:
        color_mode = ColorMode(kind="sh", sh_degree=0)
        rgb = np.stack([vertices[channel] for channel in ("red", "green", "blue")], axis=-1) / 255
        color_params = rgb_to_sh(rgb).reshape(len(vertices), 3)
    else:
        color_params = np.stack([vertices[name] for name in color_names], axis=-1).astype(float)

    opacities = np.clip(vertices["opacity"].astype(float), _OPACITY_CLIP, 1 - _OPACITY_CLIP)
    return GaussianField(
        centers=np.stack([vertices[axis] for axis in ("x", "y", "z")], axis=-1),
        log_scales=np.log(np.stack([vertices[f"scale_{axis}"] for axis in range(3)], axis=-1)),
        rotations=np.stack([vertices[f"rot_{component}"] for component in range(4)], axis=-1),
        opacity_logits=logit(opacities),
        color_params=color_params.reshape(len(vertices), color_mode.feature_dim),
        color_mode=color_mode,
    )


_FORMATS = {".ply": "ply", ".png": "png", ".pfm": "pfm"}


def export(item, path, format=None, color_model=None):
    """Write a GaussianField (PLY), ImageBuffer (PNG) or DepthMap (PFM).

    Args:
        item: GaussianField, ImageBuffer or DepthMap
        path: output file; its suffix picks the format when `format` is not given
        format: Optional "ply", "png" or "pfm"
        color_model: Optional, colors neural fields in PLY exports
    """
    path = Path(path)
    format = format or _FORMATS.get(path.suffix.lower())
    writers = {
        "ply": (GaussianField, lambda: write_ply(path, item, color_model)),
        "png": (ImageBuffer, lambda: write_png(path, item)),
        "pfm": (DepthMap, lambda: write_pfm(path, item)),
    }
    if format not in writers:
        raise ValidationError(f'Cannot export to "{path}": unknown format {format!r}')
    expected_type, write = writers[format]
    if not isinstance(item, expected_type):
        raise ValidationError(f"{format.upper()} export needs a {expected_type.__name__}, got {type(item).__name__}")
    write()
