"""Front-to-back compositing of projected Gaussians into color, depth, hard depth and soft depth rasters.

Primitives are sorted once per frame by camera-space depth (ties broken by primitive index). The image is cut into
square tiles; each tile gets the sorted list of primitives whose support disc reaches one of its pixel centers.
Each primitive is then evaluated only over the pixels of its bounding box, and the nonzero values are packed per pixel
into front-to-back layers, so compositing work follows coverage rather than (primitives x pixels). Tiles are
independent, so they can be handed to a thread pool; results are always reassembled in tile order, which keeps outputs
and gradients bit-identical for any worker count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field
from typing import List, Optional, Tuple

import numpy as np

from depth_splat.constants import (
    ALPHA_MAX,
    DEFAULT_TILE_SIZE_PX,
    DILATION_FLOOR_PX2,
    HARD_DEPTH_TAU,
    MIN_ALPHA,
    MIN_TRANSMITTANCE,
)
from depth_splat.errors import DimensionMismatchError, ValidationError
from depth_splat.field.primitives import GaussianField
from depth_splat.field.projection import gaussian_pair_weights, gaussian_weight, project, project_field
from depth_splat.render.buffers import DepthMap, ImageBuffer

# Tile culling keeps primitives whose support misses the tile by less than this, pixels
SUPPORT_SLACK_PX = 1e-6


@dataclass(frozen=True)
class RenderKind:
    """What to composite. `name` is one of "color", "depth", "hard_depth", "soft_depth"; tau is used by hard depth."""

    name: str
    tau: Optional[float] = None

    def __post_init__(self):
        if self.name not in ("color", "depth", "hard_depth", "soft_depth"):
            raise ValidationError(f'Unknown render kind "{self.name}"')
        if self.name == "hard_depth" and not (self.tau is not None and 0 < self.tau < 1):
            raise ValidationError(f"Hard depth opacity tau must be in (0, 1), got {self.tau}")

    @property
    def channels(self):
        return 3 if self.name == "color" else 1

    @property
    def is_depth(self):
        return self.name != "color"


COLOR = RenderKind("color")
DEPTH = RenderKind("depth")
SOFT_DEPTH = RenderKind("soft_depth")


def hard_depth(tau=HARD_DEPTH_TAU):
    return RenderKind("hard_depth", tau)


@dataclass(frozen=True)
class RasterSettings:
    """Compositing constants.

    Attributes:
        alpha_max: clamp on per-pixel opacity alpha * G
        min_alpha: terms with smaller opacity are skipped (0 disables skipping)
        min_transmittance: accumulation stops before transmittance would drop below this (0 disables termination);
            hard depth ignores it and always sums every covering primitive
        dilation: screen-space covariance floor, px^2
        background: RGB composited onto the residual transmittance of color renders
        tile_size: tile edge length, pixels
        workers: threads used to composite tiles
    """

    alpha_max: float = ALPHA_MAX
    min_alpha: float = MIN_ALPHA
    min_transmittance: float = MIN_TRANSMITTANCE
    dilation: float = DILATION_FLOOR_PX2
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    tile_size: int = DEFAULT_TILE_SIZE_PX
    workers: int = 1


DEFAULT_SETTINGS = RasterSettings()
# No skipping and no early termination: the optimized compositor then matches the textbook sums exactly
EXACT_SETTINGS = RasterSettings(min_alpha=0.0, min_transmittance=0.0)


@dataclass
class _Slots:
    """The primitives reaching each pixel of a tile, packed front to back.

    Entry [k, p] holds the k-th primitive whose support covers pixel p; pixels covered by fewer primitives are padded
    with zero weights, which composite as fully transparent layers.
    """

    owners: np.ndarray  # (K, P) positions into the tile's candidates
    weights: np.ndarray  # (K, P)
    dx: np.ndarray  # (K, P) pixel minus mean
    dy: np.ndarray  # (K, P)

    @property
    def depth(self):
        return self.weights.shape[0]


@dataclass
class _Tile:
    rows: slice
    cols: slice
    candidates: np.ndarray  # primitive indices in front-to-back order
    slots: Optional[_Slots] = None

    @property
    def shape(self):
        return (self.rows.stop - self.rows.start, self.cols.stop - self.cols.start)

    @property
    def n_pixels(self):
        height, width = self.shape
        return height * width


@dataclass
class RasterFrame:
    """A composited frame plus everything needed to run the backward pass over it.

    Attributes:
        kind: RenderKind
        output: (H, W, C) composited values (C = 3 for color, 1 for depths)
        accum_alpha: (H, W) total compositing weight per pixel
    """

    kind: RenderKind
    field: GaussianField
    camera: object
    settings: RasterSettings
    projections: object
    opacities: np.ndarray
    values: np.ndarray  # (N, C) per-primitive colors or distances
    tiles: List[_Tile]
    output: np.ndarray = None
    accum_alpha: np.ndarray = None
    extras: dict = dataclass_field(default_factory=dict)


@dataclass
class ScreenGrads:
    """Gradients of a scalar objective w.r.t. the per-primitive screen quantities of a frame"""

    mean2d: np.ndarray  # (N, 2)
    conic: np.ndarray  # (N, 2, 2)
    opacity: np.ndarray  # (N,) w.r.t. activated opacity alpha
    values: np.ndarray  # (N, C) w.r.t. colors (color) or distances (depths)


def _sorted_visible(projections):
    visible_indices = np.flatnonzero(projections.visible)
    order = np.lexsort((visible_indices, projections.view_z[visible_indices]))
    return visible_indices[order]


def _build_tiles(camera, projections, tile_size):
    order = _sorted_visible(projections)
    mean2d = projections.mean2d[order]
    reach = (projections.radius[order] + SUPPORT_SLACK_PX) ** 2

    tiles = []
    for row_start in range(0, camera.height, tile_size):
        row_stop = min(row_start + tile_size, camera.height)
        for col_start in range(0, camera.width, tile_size):
            col_stop = min(col_start + tile_size, camera.width)
            # Distance from each mean to the nearest pixel center of the tile
            nearest_u = np.clip(mean2d[:, 0], col_start + 0.5, col_stop - 0.5)
            nearest_v = np.clip(mean2d[:, 1], row_start + 0.5, row_stop - 0.5)
            reaches = (mean2d[:, 0] - nearest_u) ** 2 + (mean2d[:, 1] - nearest_v) ** 2 <= reach
            tiles.append(_Tile(slice(row_start, row_stop), slice(col_start, col_stop), order[reaches]))
    return tiles


def _pixel_span(means, radius, start, size):
    """Tile-local [first, stop) pixel indices whose centers can lie within `radius` of `means`, padded by one"""
    first = np.clip(np.floor(means - radius - 0.5) - start, 0, size)
    stop = np.clip(np.ceil(means + radius - 0.5) + 1 - start, 0, size)
    return first.astype(int), stop.astype(int)


def _pack_slots(projections, tile):
    """Evaluate each candidate only over the pixels of its bounding box and pack the nonzero weights per pixel"""
    height, width = tile.shape
    candidates = tile.candidates
    mean2d = projections.mean2d[candidates]
    radius = projections.radius[candidates]
    col_first, col_stop = _pixel_span(mean2d[:, 0], radius, tile.cols.start, width)
    row_first, row_stop = _pixel_span(mean2d[:, 1], radius, tile.rows.start, height)

    spans = col_stop - col_first
    counts = spans * (row_stop - row_first)
    owners = np.repeat(np.arange(len(candidates)), counts)
    within = np.arange(len(owners)) - np.repeat(np.cumsum(counts) - counts, counts)
    cols = col_first[owners] + within % np.maximum(spans[owners], 1)
    rows = row_first[owners] + within // np.maximum(spans[owners], 1)
    centers = np.stack([tile.cols.start + cols + 0.5, tile.rows.start + rows + 0.5], axis=-1)
    weights, offsets = gaussian_pair_weights(
        mean2d[owners], projections.conic[candidates][owners], radius[owners], centers
    )

    covered = weights > 0
    owners, weights, offsets = owners[covered], weights[covered], offsets[covered]
    pixels = (rows * width + cols)[covered]

    # Pairs are generated in candidate order, so a stable sort by pixel keeps each pixel's list front to back
    order = np.argsort(pixels, kind="stable")
    per_pixel = np.bincount(pixels, minlength=tile.n_pixels)
    first_of_pixel = np.cumsum(per_pixel) - per_pixel
    layer = np.empty(len(pixels), dtype=int)
    layer[order] = np.arange(len(pixels)) - first_of_pixel[pixels[order]]

    depth = int(per_pixel.max()) if len(pixels) else 0
    slots = _Slots(
        owners=np.zeros((depth, tile.n_pixels), dtype=int),
        weights=np.zeros((depth, tile.n_pixels)),
        dx=np.zeros((depth, tile.n_pixels)),
        dy=np.zeros((depth, tile.n_pixels)),
    )
    slots.owners[layer, pixels] = owners
    slots.weights[layer, pixels] = weights
    slots.dx[layer, pixels] = offsets[:, 0]
    slots.dy[layer, pixels] = offsets[:, 1]
    return slots


def _slots(frame, tile):
    if tile.slots is None:
        tile.slots = _pack_slots(frame.projections, tile)
    return tile.slots


def _blend_weights(kind, settings, opacities, weights):
    """Per-(layer, pixel) compositing weights for one tile.

    Args:
        opacities, weights: (K, P) activated opacity and basis value of each packed layer
    Returns:
        dict with "weights" (K, P) and, for alpha-blended kinds, "alpha", "included", "unclamped", "t_before",
        "t_final"
    """
    if kind.name == "hard_depth":
        # Every covering primitive counts, whatever the transmittance cutoff
        covering = weights > 0
        rank = np.cumsum(covering, axis=0)
        blend = np.where(covering, kind.tau * (1 - kind.tau) ** (rank - 1), 0.0)
        return {"weights": blend}

    raw = opacities * weights
    unclamped = raw <= settings.alpha_max
    alpha = np.minimum(raw, settings.alpha_max)
    skipped = alpha < settings.min_alpha
    alpha = np.where(skipped, 0.0, alpha)

    t_after = np.cumprod(1 - alpha, axis=0)
    included = ~skipped & (weights > 0) & (t_after >= settings.min_transmittance)
    included_alpha = np.where(included, alpha, 0.0)

    transmittance = np.cumprod(1 - included_alpha, axis=0)
    t_before = np.vstack([np.ones((1, weights.shape[1])), transmittance[:-1]])
    return {
        "weights": included_alpha * t_before,
        "alpha": included_alpha,
        "included": included,
        "unclamped": unclamped,
        "t_before": t_before,
        "t_final": transmittance[-1],
    }


def _empty_tile(frame, tile):
    background = np.asarray(frame.settings.background) if frame.kind.name == "color" else np.zeros(1)
    return np.tile(background, (tile.n_pixels, 1)), np.zeros(tile.n_pixels)


def _composite_tile(frame, tile):
    if len(tile.candidates) == 0:
        return _empty_tile(frame, tile)
    slots = _slots(frame, tile)
    if slots.depth == 0:
        return _empty_tile(frame, tile)

    owners = tile.candidates[slots.owners]
    blend = _blend_weights(frame.kind, frame.settings, frame.opacities[owners], slots.weights)
    values = frame.values[owners]  # (K, P, C)

    if frame.kind.name == "hard_depth":
        effective = blend["weights"] * slots.weights
        return np.einsum("kp,kpc->pc", effective, values), effective.sum(axis=0)

    composited = np.einsum("kp,kpc->pc", blend["weights"], values)
    if frame.kind.name == "color":
        composited = composited + blend["t_final"][:, None] * np.asarray(frame.settings.background)[None, :]
    return composited, blend["weights"].sum(axis=0)


def _backward_tile(frame, tile, upstream):
    """Partial gradients of <upstream, frame output> over one tile, for the tile's candidates only"""
    n = len(tile.candidates)
    channels = frame.kind.channels
    partial = ScreenGrads(
        mean2d=np.zeros((n, 2)), conic=np.zeros((n, 2, 2)), opacity=np.zeros(n), values=np.zeros((n, channels))
    )
    if n == 0 or _slots(frame, tile).depth == 0:
        return partial

    slots = tile.slots
    owners = tile.candidates[slots.owners]
    weights = slots.weights
    opacities = frame.opacities[owners]
    blend = _blend_weights(frame.kind, frame.settings, opacities, weights)
    values = frame.values[owners]
    upstream = upstream.reshape(tile.n_pixels, channels)

    def scatter(entries):
        # Padding layers carry zero entries, so they add nothing to candidate 0
        return np.bincount(slots.owners.ravel(), weights=entries.ravel(), minlength=n)

    if frame.kind.name == "hard_depth":
        # D = sum_i w_i G_i d_i with constant w_i
        per_pixel = upstream[:, 0][None, :]
        partial.values[:, 0] = scatter(per_pixel * blend["weights"] * weights)
        grad_weights = per_pixel * blend["weights"] * values[..., 0]
    else:
        for channel in range(channels):
            partial.values[:, channel] = scatter(blend["weights"] * upstream[:, channel][None, :])

        projected_upstream = np.einsum("kpc,pc->kp", values, upstream)
        weighted = blend["weights"] * projected_upstream
        background_term = np.zeros(tile.n_pixels)
        if frame.kind.name == "color":
            background_term = blend["t_final"] * (upstream @ np.asarray(frame.settings.background))
        total = weighted.sum(axis=0) + background_term
        # Everything composited behind layer k, including the background
        behind = total[None, :] - np.cumsum(weighted, axis=0)

        one_minus_alpha = 1 - blend["alpha"]
        behind_over_transmission = np.divide(
            behind, one_minus_alpha, out=np.zeros_like(behind), where=one_minus_alpha > 0
        )
        grad_alpha = np.where(blend["included"], blend["t_before"] * projected_upstream - behind_over_transmission, 0.0)
        grad_alpha = np.where(blend["unclamped"], grad_alpha, 0.0)

        partial.opacity[:] = scatter(grad_alpha * weights)
        grad_weights = grad_alpha * opacities

    # G = exp(-1/2 d^T Q d) with d = pixel - mean
    conic = frame.projections.conic[owners]
    grad_power = grad_weights * weights
    dx, dy = slots.dx, slots.dy
    conic_dx = conic[..., 0, 0] * dx + conic[..., 0, 1] * dy
    conic_dy = conic[..., 0, 1] * dx + conic[..., 1, 1] * dy
    partial.mean2d[:, 0] = scatter(grad_power * conic_dx)
    partial.mean2d[:, 1] = scatter(grad_power * conic_dy)
    partial.conic[:, 0, 0] = -0.5 * scatter(grad_power * dx * dx)
    partial.conic[:, 0, 1] = -0.5 * scatter(grad_power * dx * dy)
    partial.conic[:, 1, 0] = partial.conic[:, 0, 1]
    partial.conic[:, 1, 1] = -0.5 * scatter(grad_power * dy * dy)
    return partial


def _map_tiles(settings, fn, tiles):
    if settings.workers > 1 and len(tiles) > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            return list(pool.map(fn, tiles))
    return [fn(tile) for tile in tiles]


def _guard_values(kind, field, colors):
    if kind.name != "color":
        return
    if colors is None:
        raise ValidationError("Color renders need one rgb per primitive from the color model")
    if np.shape(colors) != (len(field), 3):
        raise DimensionMismatchError(f"Expected colors of shape ({len(field)}, 3), got {np.shape(colors)}")


def rasterize(kind, field, camera, colors=None, settings=DEFAULT_SETTINGS):
    """Composite `field` as seen from `camera`.

    Args:
        kind: RenderKind
        field: GaussianField
        camera: Camera
        colors: (N, 3) per-primitive rgb, required for color renders
        settings: Optional RasterSettings
    Returns:
        RasterFrame with `output` (H, W, C) and `accum_alpha` (H, W) filled in
    """
    _guard_values(kind, field, colors)
    projections = project_field(field, camera, settings.dilation)
    values = np.asarray(colors, dtype=float) if kind.name == "color" else projections.dist[:, None]

    frame = RasterFrame(
        kind=kind,
        field=field,
        camera=camera,
        settings=settings,
        projections=projections,
        opacities=field.opacities,
        values=values,
        tiles=_build_tiles(camera, projections, settings.tile_size),
    )

    output = np.zeros((camera.height, camera.width, kind.channels))
    accum_alpha = np.zeros((camera.height, camera.width))
    composited_tiles = _map_tiles(settings, lambda tile: _composite_tile(frame, tile), frame.tiles)
    for tile, (composited, accumulated) in zip(frame.tiles, composited_tiles):
        output[tile.rows, tile.cols] = composited.reshape(tile.shape + (kind.channels,))
        accum_alpha[tile.rows, tile.cols] = accumulated.reshape(tile.shape)

    frame.output = output
    frame.accum_alpha = np.clip(accum_alpha, 0, 1)
    return frame


def rasterize_backward(frame, upstream):
    """Gradients of <upstream, frame.output> w.r.t. the frame's per-primitive screen quantities.

    Args:
        frame: RasterFrame from `rasterize`
        upstream: cotangent with the shape of frame.output, or (H, W) for depth kinds
    Returns:
        ScreenGrads with one row per primitive of the field (zero for culled or non-contributing primitives)
    """
    height, width, channels = frame.output.shape
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape == (height, width) and channels == 1:
        upstream = upstream[..., None]
    if upstream.shape != frame.output.shape:
        raise DimensionMismatchError(
            f"Upstream gradient shape {upstream.shape} does not match render {frame.output.shape}"
        )

    def backward(tile):
        return _backward_tile(frame, tile, upstream[tile.rows, tile.cols])

    n = len(frame.field)
    grads = ScreenGrads(
        mean2d=np.zeros((n, 2)), conic=np.zeros((n, 2, 2)), opacity=np.zeros(n), values=np.zeros((n, channels))
    )
    # Fixed tile order keeps the reduction deterministic regardless of worker count
    for tile, partial in zip(frame.tiles, _map_tiles(frame.settings, backward, frame.tiles)):
        np.add.at(grads.mean2d, tile.candidates, partial.mean2d)
        np.add.at(grads.conic, tile.candidates, partial.conic)
        np.add.at(grads.opacity, tile.candidates, partial.opacity)
        np.add.at(grads.values, tile.candidates, partial.values)
    return grads


def _depth_map(frame):
    return DepthMap(depth=np.maximum(frame.output[..., 0], 0), accum_alpha=frame.accum_alpha)


def render_color(field, camera, colors, settings=DEFAULT_SETTINGS):
    """Alpha-composited color image; empty fields render as pure background"""
    frame = rasterize(COLOR, field, camera, colors, settings)
    return ImageBuffer(np.clip(frame.output, 0, 1))


def render_depth(field, camera, settings=DEFAULT_SETTINGS):
    """Expected depth: distances to the camera center blended with the color-compositing weights"""
    return _depth_map(rasterize(DEPTH, field, camera, settings=settings))


def render_hard_depth(field, camera, tau=HARD_DEPTH_TAU, settings=DEFAULT_SETTINGS):
    """Depth with every primitive's opacity replaced by tau: sum_i tau (1 - tau)^(i-1) G_i ||mu_i - o||, where i
    counts the primitives covering the pixel front to back. The learned opacity is not read.
    """
    return _depth_map(rasterize(hard_depth(tau), field, camera, settings=settings))


def render_soft_depth(field, camera, settings=DEFAULT_SETTINGS):
    """Same forward values as render_depth; only its gradient contract differs (see autodiff.vjp)"""
    return _depth_map(rasterize(SOFT_DEPTH, field, camera, settings=settings))


def composite_reference(field, camera, kind, pixel, colors=None, settings=DEFAULT_SETTINGS):
    """Textbook per-pixel compositing, one primitive at a time, used as an oracle for the tiled rasterizer.

    No skip threshold and no early termination are applied; the alpha clamp is kept.

    Args:
        field: GaussianField
        camera: Camera
        kind: RenderKind
        pixel: (u, v) integer pixel index; its center (u + 0.5, v + 0.5) is evaluated
        colors: (N, 3) rgb, required for color
        settings: Optional RasterSettings (alpha clamp, dilation and background are read)
    Returns:
        rgb 3-vector for color, float for depth kinds
    """
    _guard_values(kind, field, colors)
    position = np.array([pixel[0] + 0.5, pixel[1] + 0.5])

    layers = []
    for index in range(len(field)):
        projected = project(field.primitive(index), camera, settings.dilation)
        if projected is None:
            continue
        weight = gaussian_weight(projected, position)
        value = np.asarray(colors[index], dtype=float) if kind.name == "color" else projected.dist
        layers.append((projected.view_z, index, weight, float(field.opacities[index]), value))
    layers.sort(key=lambda layer: (layer[0], layer[1]))

    if kind.name == "hard_depth":
        total = 0.0
        covering_rank = 0
        for _, _, weight, _, dist in layers:
            if weight <= 0:
                continue
            covering_rank += 1
            total += kind.tau * (1 - kind.tau) ** (covering_rank - 1) * weight * dist
        return total

    transmittance = 1.0
    total = np.zeros(3) if kind.name == "color" else 0.0
    for _, _, weight, opacity, value in layers:
        alpha = min(opacity * weight, settings.alpha_max)
        total = total + value * alpha * transmittance
        transmittance *= 1 - alpha

    if kind.name == "color":
        return total + transmittance * np.asarray(settings.background, dtype=float)
    return total
