"""Synthetic sparse-view scenes: a ground-truth field, a ring of cameras, rendered images, ground-truth depth and
"monocular-like" depth corrupted by an unknown scale, shift and noise.

Geometry: the central camera sits at look_at - (0, 0, ring_radius) looking down +z, so a primitive at world z has
depth about z + ring_radius - look_at_z from it. Generators place content by that depth. Cameras lie on a horizontal
arc of `arc_degrees` around look_at; training views span the arc and test views sit between them.
"""

import json
import logging
from dataclasses import dataclass, field as dataclass_field
from typing import Tuple

import numpy as np
from scipy.special import logit

from depth_splat.color.model import ShColorModel
from depth_splat.color.sh import rgb_to_sh
from depth_splat.errors import ValidationError
from depth_splat.field.camera import look_at
from depth_splat.field.primitives import IDENTITY_QUATERNION, ColorMode, GaussianField
from depth_splat.dataset.views import Dataset, View
from depth_splat.render.buffers import DepthMap
from depth_splat.render.rasterizer import DEFAULT_SETTINGS, render_color, render_depth

logger = logging.getLogger(__name__)

TEXTURED_PLANES = "textured_planes"
GAUSSIAN_CLUSTERS = "gaussian_clusters"
SPHERE_SHELL = "sphere_shell"
GENERATOR_KINDS = (TEXTURED_PLANES, GAUSSIAN_CLUSTERS, SPHERE_SHELL)

GROUND_TRUTH_COLOR_MODE = ColorMode(kind="sh", sh_degree=0)
GROUND_TRUTH_OPACITY = 0.95
BOX_PADDING = 0.1


@dataclass(frozen=True)
class SceneSpec:
    """Attributes:
    kind: one of GENERATOR_KINDS
    primitives: ground-truth primitive count
    depth_range: (near, far) depth of the content from the central camera, world units
    texture_frequency: cycles per world unit of the sinusoidal color texture
    planes: plane count (textured_planes), cluster count (gaussian_clusters)
    ring_radius: distance of every camera from look_at
    arc_degrees: angular span of the camera arc
    train_views, test_views: camera counts
    look_at: world point every camera looks at
    width, height, focal: image size and focal length, pixels
    mono_scale, mono_shift, mono_noise: mono depth = mono_scale * depth + mono_shift + N(0, mono_noise)
    """

    kind: str = GAUSSIAN_CLUSTERS
    primitives: int = 200
    depth_range: Tuple[float, float] = (2.0, 4.0)
    texture_frequency: float = 2.0
    planes: int = 2
    ring_radius: float = 3.0
    arc_degrees: float = 30.0
    train_views: int = 3
    test_views: int = 2
    look_at: Tuple[float, float, float] = dataclass_field(default=(0.0, 0.0, 0.0))
    width: int = 32
    height: int = 32
    focal: float = 32.0
    mono_scale: float = 1.0
    mono_shift: float = 0.0
    mono_noise: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "depth_range", tuple(float(d) for d in self.depth_range))
        object.__setattr__(self, "look_at", tuple(float(c) for c in self.look_at))
        _guard_spec(self)


def _guard_spec(spec):
    if spec.kind not in GENERATOR_KINDS:
        raise ValidationError(f'Unknown scene kind "{spec.kind}"; expected one of {GENERATOR_KINDS}')
    for name in ("primitives", "planes", "train_views", "width", "height"):
        if getattr(spec, name) < 1:
            raise ValidationError(f"{name} must be >= 1, got {getattr(spec, name)}")
    if spec.test_views < 0:
        raise ValidationError(f"test_views must be >= 0, got {spec.test_views}")
    near, far = spec.depth_range
    if not 0 < near <= far:
        raise ValidationError(f"depth_range must satisfy 0 < near <= far, got {spec.depth_range}")
    if not (spec.ring_radius > 0 and spec.focal > 0):
        raise ValidationError("ring_radius and focal must be positive")
    if spec.mono_noise < 0:
        raise ValidationError(f"mono_noise must be >= 0, got {spec.mono_noise}")


def load_scene_spec(path):
    """SceneSpec from a JSON object of field overrides"""
    with open(path) as spec_file:
        try:
            overrides = json.load(spec_file)
        except json.JSONDecodeError as error:
            raise ValidationError(f"Scene spec {path} is not valid JSON: {error}")
    if not isinstance(overrides, dict):
        raise ValidationError(f"Scene spec {path} must contain a JSON object")
    unknown = set(overrides) - set(SceneSpec.__dataclass_fields__)
    if unknown:
        raise ValidationError(f"Unknown scene spec keys {sorted(unknown)}")
    return SceneSpec(**overrides)


def _texture(points, frequency):
    """Smooth rgb pattern in [0.1, 0.9] varying across x and y"""
    x, y = points[:, 0], points[:, 1]
    phase = 2 * np.pi * frequency
    return 0.5 + 0.4 * np.stack(
        [np.sin(phase * x) * np.cos(phase * y), np.cos(phase * x), np.sin(phase * (x + y) + 1)], axis=-1
    )


def _central_z(spec, depth):
    return spec.look_at[2] - spec.ring_radius + depth


def _textured_planes(spec, rng):
    """Fronto-parallel planes at evenly spaced depths, each covering its own vertical strip of the central view"""
    depths = np.linspace(*spec.depth_range, spec.planes)
    per_plane = max(spec.primitives // spec.planes, 1)
    side = int(np.ceil(np.sqrt(per_plane)))
    half_fov_x = spec.width / 2 / spec.focal
    half_fov_y = spec.height / 2 / spec.focal

    centers, log_scales = [], []
    for index, depth in enumerate(depths):
        # Strip edges in normalized image x, widened so neighbouring strips overlap
        left = -half_fov_x + 2 * half_fov_x * (index - 0.1) / spec.planes
        right = -half_fov_x + 2 * half_fov_x * (index + 1.1) / spec.planes
        xs = depth * np.linspace(left, right, side) + spec.look_at[0]
        ys = depth * np.linspace(-1.1 * half_fov_y, 1.1 * half_fov_y, side) + spec.look_at[1]
        grid_x, grid_y = (axis.ravel()[:per_plane] for axis in np.meshgrid(xs, ys))
        spacing = max(xs[1] - xs[0] if side > 1 else depth * half_fov_x, 1e-3)
        centers.append(np.stack([grid_x, grid_y, np.full(len(grid_x), _central_z(spec, depth))], axis=-1))
        log_scales.append(np.tile(np.log([0.6 * spacing, 0.6 * spacing, 0.02 * spacing]), (len(grid_x), 1)))
    return np.concatenate(centers), np.concatenate(log_scales)


def _gaussian_clusters(spec, rng):
    """Blobs of primitives normally scattered around cluster centers at random depths"""
    near, far = spec.depth_range
    spread = 0.15 * (far - near) + 0.05
    cluster_depths = rng.uniform(near, far, size=spec.planes)
    cluster_centers = np.stack(
        [
            spec.look_at[0] + rng.uniform(-0.4, 0.4, size=spec.planes) * cluster_depths * spec.width / spec.focal,
            spec.look_at[1] + rng.uniform(-0.4, 0.4, size=spec.planes) * cluster_depths * spec.height / spec.focal,
            _central_z(spec, cluster_depths),
        ],
        axis=-1,
    )
    membership = rng.integers(spec.planes, size=spec.primitives)
    centers = cluster_centers[membership] + rng.normal(0, spread, size=(spec.primitives, 3))
    log_scales = np.log(rng.uniform(0.3, 0.6, size=(spec.primitives, 3)) * spread)
    return centers, log_scales


def _sphere_shell(spec, rng):
    """Primitives spread evenly over a sphere whose near and far points sit at the two ends of depth_range"""
    near, far = spec.depth_range
    radius = max((far - near) / 2, 1e-3)
    # Fibonacci lattice
    index = np.arange(spec.primitives) + 0.5
    polar = np.arccos(1 - 2 * index / spec.primitives)
    azimuth = np.pi * (1 + np.sqrt(5)) * index
    directions = np.stack([np.sin(polar) * np.cos(azimuth), np.sin(polar) * np.sin(azimuth), np.cos(polar)], axis=-1)
    center = np.array([spec.look_at[0], spec.look_at[1], _central_z(spec, (near + far) / 2)])
    size = 2 * radius / np.sqrt(spec.primitives)
    return center + radius * directions, np.tile(np.log([size, size, size]), (spec.primitives, 1))


_GENERATORS = {TEXTURED_PLANES: _textured_planes, GAUSSIAN_CLUSTERS: _gaussian_clusters, SPHERE_SHELL: _sphere_shell}


def ground_truth_field(spec, rng):
    centers, log_scales = _GENERATORS[spec.kind](spec, rng)
    n = len(centers)
    return GaussianField(
        centers=centers,
        log_scales=log_scales,
        rotations=np.tile(IDENTITY_QUATERNION, (n, 1)),
        opacity_logits=np.full(n, logit(GROUND_TRUTH_OPACITY)),
        color_params=rgb_to_sh(_texture(centers, spec.texture_frequency)),
        color_mode=GROUND_TRUTH_COLOR_MODE,
    )


def camera_ring(spec):
    """(train cameras, test cameras) on the arc around look_at

    Raises:
        ValidationError: more than one camera and a zero-width arc, which would put every camera in the same place
    """
    total = spec.train_views + spec.test_views
    if total > 1 and spec.arc_degrees == 0:
        raise ValidationError("Degenerate camera ring: a zero-degree arc puts every camera at the same position")
    half_arc = np.radians(spec.arc_degrees) / 2
    train_angles = np.linspace(-half_arc, half_arc, spec.train_views) if spec.train_views > 1 else np.zeros(1)
    test_angles = np.linspace(-half_arc, half_arc, spec.test_views + 2)[1:-1]
    target = np.asarray(spec.look_at)

    def camera(angle):
        eye = target + spec.ring_radius * np.array([np.sin(angle), 0.0, -np.cos(angle)])
        return look_at(eye, target, [0, -1, 0], spec.focal, spec.focal, spec.width, spec.height)

    return [camera(angle) for angle in train_angles], [camera(angle) for angle in test_angles]


def corrupt_depth(depth, spec, rng):
    """Monocular-like depth: mono_scale * depth + mono_shift, plus Gaussian noise when mono_noise > 0"""
    mono = spec.mono_scale * depth.depth + spec.mono_shift
    if spec.mono_noise > 0:
        mono = mono + rng.normal(0, spec.mono_noise, size=mono.shape)
    return DepthMap(np.maximum(mono, 0))


def _scene_box(field):
    lower = (field.centers - 3 * field.scales).min(axis=0)
    upper = (field.centers + 3 * field.scales).max(axis=0)
    margin = BOX_PADDING * (upper - lower)
    return lower - margin, upper + margin


def synth_scene(spec, seed, settings=DEFAULT_SETTINGS):
    """Render a synthetic dataset.

    Args:
        spec: SceneSpec
        seed: integer; the same spec and seed always produce the same dataset
        settings: Optional RasterSettings for the ground-truth renders
    Returns:
        (Dataset, ground-truth GaussianField). Every view carries its ground-truth depth; training views also carry
        the corrupted monocular-like depth.
    """
    rng = np.random.default_rng(seed)
    field = ground_truth_field(spec, rng)
    color_model = ShColorModel(GROUND_TRUTH_COLOR_MODE.sh_degree)
    train_cameras, test_cameras = camera_ring(spec)

    def make_view(name, camera, with_mono):
        image = render_color(field, camera, color_model.colors(field, camera), settings)
        gt_depth = render_depth(field, camera, settings)
        mono_depth = corrupt_depth(gt_depth, spec, rng) if with_mono else None
        return View(name=name, image=image, camera=camera, mono_depth=mono_depth, gt_depth=gt_depth)

    train = [make_view(f"train_{index:03d}", camera, True) for index, camera in enumerate(train_cameras)]
    test = [make_view(f"test_{index:03d}", camera, False) for index, camera in enumerate(test_cameras)]
    logger.info(
        "Synthesized %s scene: %d primitives, %d train and %d test views", spec.kind, len(field), len(train), len(test)
    )
    return Dataset(train=train, test=test, box=_scene_box(field)), field
