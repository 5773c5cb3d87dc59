"""The optimization loop: color supervision plus hard and soft depth regularization under freeze masks, one Adam
update per step from the summed gradient, periodic densification and held-out evaluation.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from depth_splat.autodiff.vjp import ParamGrads, vjp_frame
from depth_splat.color.model import encoder_box, make_color_model
from depth_splat.errors import (
    DatasetFormatError,
    DimensionMismatchError,
    EmptyFieldError,
    NonFiniteLossError,
    ValidationError,
)
from depth_splat.evaluate import AGGREGATE_ROW, METRIC_COLUMNS, evaluate
from depth_splat.field.primitives import (
    HARD_DEPTH_FREEZE,
    NO_FREEZE,
    PARAMETER_GROUPS,
    SOFT_DEPTH_FREEZE,
    init_random,
)
from depth_splat.losses.normalize import partition, sample_patch_size
from depth_splat.losses.objective import color_loss_grad, depth_regularization_grad, total_loss
from depth_splat.losses.ssim import MIN_IMAGE_SIZE
from depth_splat.render.rasterizer import COLOR, DEFAULT_SETTINGS, SOFT_DEPTH, RasterSettings, hard_depth, rasterize
from depth_splat.train.densify import DensifyStats, densify_and_prune
from depth_splat.train.optimizer import Adam, exponential_lr

logger = logging.getLogger(__name__)

# Camera-spread radius is padded by this factor, as in the reference splatting optimizer
EXTENT_PADDING = 1.1
LOSS_EMA_WEIGHT = 0.4


@dataclass
class TrainState:
    """Everything a run mutates. Single owner; `train_step` advances it in place.

    Attributes:
        field: GaussianField being optimized
        color_model: ShColorModel or NeuralColorModel (its version keys the feature cache)
        optimizer: Adam with moments for every parameter group and model weight
        densify_stats: accumulated screen-gradient norms since the last densification
        rng: the run's single random stream (view sampling, patch sizes, densify offsets)
        extent: scene extent, world units; scales the center learning rate and the clone / split cutoff
        iteration: completed steps
    """

    field: object
    color_model: object
    optimizer: Adam
    densify_stats: DensifyStats
    rng: np.random.Generator
    extent: float
    iteration: int = 0


@dataclass
class StepTerms:
    """Loss values and per-term gradients of one step, before any update.

    hard_grads / soft_grads are None when the term is switched off or not yet active.
    """

    color: float
    hard: float
    soft: float
    total: float
    grads: ParamGrads
    color_grads: ParamGrads
    hard_grads: Optional[ParamGrads]
    soft_grads: Optional[ParamGrads]
    color_frame: object


@dataclass(frozen=True)
class StepStats:
    iteration: int
    view: str
    patch_size: int
    color: float
    hard: float
    soft: float
    total: float
    primitives: int
    center_lr: float


@dataclass
class FitResult:
    field: object
    color_model: object
    log: pd.DataFrame
    state: TrainState


def scene_extent(camera_centers, box):
    """1.1 x the largest distance of a camera center from their mean; half the box diagonal for a single camera"""
    centers = np.asarray(camera_centers, dtype=float).reshape(-1, 3)
    radius = np.linalg.norm(centers - centers.mean(axis=0), axis=1).max() if len(centers) else 0.0
    if radius > 0:
        return float(EXTENT_PADDING * radius)
    lower, upper = box
    return float(np.linalg.norm(np.asarray(upper) - np.asarray(lower)) / 2)


def build_color_model(config, box):
    """Color model for config.color_mode; `box` is the neural encoder's bounding box"""
    return make_color_model(
        config.parsed_color_mode,
        box=box,
        seed=config.seed,
        levels=config.hash_levels,
        max_resolution=config.hash_max_resolution,
        table_size_log2=config.hash_table_size_log2,
        width=config.mlp_width,
    )


def learning_rates(config, color_model, extent):
    rates = {
        "center": config.center_lr_init * extent,
        "scale": config.scale_lr,
        "rotation": config.rotation_lr,
        "opacity": config.opacity_lr,
        "color": config.color_lr,
    }
    rates.update({name: config.neural_lr for name in color_model.parameters()})
    return rates


def create_state(config, dataset):
    """Randomly initialized field inside the dataset's box, a fresh color model and optimizer"""
    color_mode = config.parsed_color_mode
    field = init_random(config.initial_primitives, dataset.box, config.seed, color_mode)
    color_model = build_color_model(config, encoder_box(dataset.box, dataset.camera_centers))
    extent = scene_extent([view.camera.center for view in dataset.train], dataset.box)
    return TrainState(
        field=field,
        color_model=color_model,
        optimizer=Adam(learning_rates(config, color_model, extent)),
        densify_stats=DensifyStats.zeros(len(field)),
        rng=np.random.default_rng(config.seed),
        extent=extent,
    )


def depth_freeze_masks(config):
    """(hard, soft) freeze masks after the shape / center / depth freezing switches"""
    if not config.depth_freeze:
        return NO_FREEZE, NO_FREEZE
    hard, soft = HARD_DEPTH_FREEZE, SOFT_DEPTH_FREEZE
    if not config.shape_freeze:
        hard = hard.thawed("scale", "rotation")
        soft = soft.thawed("scale", "rotation")
    if not config.center_freeze:
        soft = soft.thawed("center")
    return hard, soft


def _guard_mono_depth(view):
    if view.mono_depth is None:
        raise DatasetFormatError(f"View {view.name} has no monocular depth map but depth regularization is enabled")
    return view.mono_depth


def _depth_term(kind, field, views, grid, config, mask, settings):
    """Depth regularization of `kind` renders, averaged over `views`"""
    value = 0.0
    grads = ParamGrads.zeros_like(field)
    for view in views:
        frame = rasterize(kind, field, view.camera, settings=settings)
        term, depth_grads = depth_regularization_grad(
            frame.output[..., 0],
            _guard_mono_depth(view),
            grid,
            config.loss_weights,
            use_local=config.use_local_norm,
            use_global=config.use_global_norm,
        )
        value += term
        grads = grads + vjp_frame(frame, depth_grads, mask)
    return value / len(views), grads.scaled(1 / len(views))


def compute_step(field, color_model, view, config, iteration, patch_size, settings=DEFAULT_SETTINGS, depth_views=()):
    """Losses and gradients of one step without touching any state.

    Args:
        field: GaussianField
        color_model: color model matching the field
        view: View supervising color, and the first view supervising depth
        config: TrainConfig
        iteration: completed steps so far; the soft term is active once it reaches config.soft_start_iter
        patch_size: local-normalization patch edge length, pixels
        settings: Optional RasterSettings
        depth_views: Optional extra views that also receive depth regularization
    Returns:
        StepTerms
    """
    weights = config.loss_weights
    color_frame = rasterize(COLOR, field, view.camera, color_model.colors(field, view.camera), settings)
    color_value, image_grads = color_loss_grad(color_frame.output, view.image, weights.dssim)
    color_grads = vjp_frame(color_frame, image_grads, NO_FREEZE, color_model)

    hard_mask, soft_mask = depth_freeze_masks(config)
    grid = partition(view.camera.width, view.camera.height, patch_size)
    supervised = [view] + list(depth_views)
    hard_value = soft_value = 0.0
    hard_grads = soft_grads = None
    grads = color_grads
    if config.use_hard:
        hard_kind = hard_depth(weights.tau)
        hard_value, hard_grads = _depth_term(hard_kind, field, supervised, grid, config, hard_mask, settings)
        grads = grads + hard_grads
    soft_active = config.use_soft and iteration >= config.soft_start_iter
    if soft_active:
        soft_value, soft_grads = _depth_term(SOFT_DEPTH, field, supervised, grid, config, soft_mask, settings)
        grads = grads + soft_grads

    return StepTerms(
        color=color_value,
        hard=hard_value,
        soft=soft_value,
        total=total_loss(color_value, hard_value, soft_value, soft_active),
        grads=grads,
        color_grads=color_grads,
        hard_grads=hard_grads,
        soft_grads=soft_grads,
        color_frame=color_frame,
    )


def _diagnostics(state, terms):
    params = {group: state.field.parameter(group) for group in PARAMETER_GROUPS}
    params.update(state.color_model.parameters())
    return {
        "iteration": state.iteration,
        "color": terms.color,
        "hard": terms.hard,
        "soft": terms.soft,
        "total": terms.total,
        "primitives": len(state.field),
        "non_finite_parameters": int(sum(np.count_nonzero(~np.isfinite(array)) for array in params.values())),
        "finite_gradients": terms.grads.is_finite(),
    }


def _is_densify_step(iteration, config):
    in_window = config.densify_start_iter <= iteration <= config.densify_stop_iter
    return in_window and iteration % config.densify_interval == 0


def train_step(state, view, config, settings=DEFAULT_SETTINGS, depth_views=()):
    """One optimization step on `view`: sample a patch size, compute the summed loss gradient, apply Adam, accumulate
    densification statistics from the color pass and densify when the schedule says so.

    Returns:
        StepStats
    Raises:
        NonFiniteLossError: the loss or its gradient is not finite; `diagnostics` describes the state
    """
    patch_size = sample_patch_size(state.rng, config.patch_range)
    terms = compute_step(
        state.field, state.color_model, view, config, state.iteration, patch_size, settings, depth_views
    )
    if not np.isfinite(terms.total) or not terms.grads.is_finite():
        diagnostics = _diagnostics(state, terms)
        raise NonFiniteLossError(f"Non-finite loss at iteration {state.iteration}: {diagnostics}", diagnostics)

    center_lr = exponential_lr(state.iteration, config.center_lr_init, config.center_lr_final, config.total_iters)
    state.optimizer.set_learning_rate("center", center_lr * state.extent)
    params = {group: state.field.parameter(group) for group in PARAMETER_GROUPS}
    params.update(state.color_model.parameters())
    grads = {group: terms.grads.group(group) for group in PARAMETER_GROUPS}
    grads.update(terms.grads.model)
    state.optimizer.step(params, grads)
    state.field.bump_version()
    state.color_model.bump_version()

    state.densify_stats.accumulate(terms.color_grads.mean2d, terms.color_frame.projections.visible)
    state.iteration += 1
    if _is_densify_step(state.iteration, config):
        state.field, summary = densify_and_prune(
            state.field, state.densify_stats, state.optimizer, config, state.extent, state.rng
        )
        state.densify_stats = DensifyStats.zeros(len(state.field))
        logger.info(
            "Iteration %d: cloned %d, split %d, pruned %d, %d primitives",
            state.iteration,
            summary.cloned,
            summary.split,
            summary.pruned,
            summary.primitives,
        )

    return StepStats(
        iteration=state.iteration,
        view=view.name,
        patch_size=patch_size,
        color=terms.color,
        hard=terms.hard,
        soft=terms.soft,
        total=terms.total,
        primitives=len(state.field),
        center_lr=center_lr * state.extent,
    )


def _guard_dataset(config, dataset):
    if not dataset.train:
        raise ValidationError("The dataset has no training views")
    if config.uses_depth and not dataset.has_mono_depth:
        missing = [view.name for view in dataset.train if view.mono_depth is None]
        raise DatasetFormatError(f"Depth regularization is enabled but views {missing} have no monocular depth")
    # Held-out views are always scored with SSIM
    small = [view.name for view in dataset.train + dataset.test if min(view.image.rgb.shape[:2]) < MIN_IMAGE_SIZE]
    if small:
        raise DimensionMismatchError(
            f"Views {small} are smaller than the {MIN_IMAGE_SIZE}x{MIN_IMAGE_SIZE} SSIM window used by the color loss "
            "and the evaluation"
        )


def _sample_views(state, dataset, config):
    train = dataset.train
    if config.view_sampling == "round_robin":
        index = state.iteration % len(train)
    else:
        index = int(state.rng.integers(len(train)))
    extra = []
    if config.uses_depth and config.depth_views_per_step > 1 and len(train) > 1:
        others = [i for i in range(len(train)) if i != index]
        count = min(config.depth_views_per_step - 1, len(others))
        extra = [train[i] for i in state.rng.choice(others, size=count, replace=False)]
    return train[index], extra


def _evaluation_row(state, dataset, settings, loss):
    split = "test" if dataset.test else "train"
    table = evaluate(state.field, dataset, state.color_model, settings, split=split)
    row = {"iteration": state.iteration, "loss": loss, "primitives": len(state.field)}
    row.update(table.loc[AGGREGATE_ROW, METRIC_COLUMNS].to_dict())
    logger.info(
        "Iteration %d: %s PSNR %.2f dB, SSIM %.4f, depth MAE %.4f",
        state.iteration,
        split,
        row["psnr"],
        row["ssim"],
        row["depth_mae"],
    )
    return row


def fit(config, dataset, settings=None, progress=True):
    """Train a field on `dataset` for config.total_iters steps.

    Views are drawn with the run's seeded stream (or round robin). Held-out metrics are computed every
    config.eval_interval steps and after the last one, on the test views (the training views when there are none).

    Args:
        config: TrainConfig
        dataset: Dataset with at least one training view; monocular depth on every training view when depth
            regularization is enabled
        settings: Optional RasterSettings; defaults to the library settings with config.workers threads
        progress: Optional, show a tqdm progress bar
    Returns:
        FitResult whose `log` is a DataFrame indexed by iteration with the smoothed training loss, primitive count and
        the mean held-out psnr, ssim, depth_mae and depth_rmse
    Raises:
        ValidationError: no training views
        DatasetFormatError: depth regularization without monocular depth
        DimensionMismatchError: a view smaller than the SSIM window
        NonFiniteLossError: a step produced a non-finite loss
    """
    _guard_dataset(config, dataset)
    settings = settings or RasterSettings(workers=config.workers)
    state = create_state(config, dataset)
    logger.info(
        "Training %d primitives on %d views for %d iterations", len(state.field), len(dataset.train), config.total_iters
    )

    rows = []
    smoothed_loss = np.nan
    progress_bar = tqdm(range(config.total_iters), desc="Training", disable=not progress)
    for _ in progress_bar:
        view, depth_views = _sample_views(state, dataset, config)
        stats = train_step(state, view, config, settings, depth_views)
        if np.isnan(smoothed_loss):
            smoothed_loss = stats.total
        smoothed_loss = LOSS_EMA_WEIGHT * stats.total + (1 - LOSS_EMA_WEIGHT) * smoothed_loss
        progress_bar.set_postfix(
            loss=f"{smoothed_loss:.5f}", hard=f"{stats.hard:.4f}", soft=f"{stats.soft:.4f}", n=stats.primitives
        )
        if not len(state.field):
            raise EmptyFieldError(f"Every primitive was pruned by iteration {state.iteration}")
        periodic = config.eval_interval and state.iteration % config.eval_interval == 0
        if periodic and state.iteration < config.total_iters:
            rows.append(_evaluation_row(state, dataset, settings, smoothed_loss))

    rows.append(_evaluation_row(state, dataset, settings, smoothed_loss))
    log = pd.DataFrame(rows).set_index("iteration")
    return FitResult(field=state.field, color_model=state.color_model, log=log, state=state)
