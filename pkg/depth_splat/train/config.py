"""Training configuration: a frozen dataclass whose defaults come from depth_splat.constants, loadable from JSON."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from typing import Tuple

from depth_splat.constants import (
    CENTER_LR_FINAL,
    CENTER_LR_INIT,
    CLONE_EXTENT_FRACTION,
    DENSIFY_GRAD_THRESHOLD,
    DENSIFY_INTERVAL,
    DENSIFY_START_ITER,
    DENSIFY_STOP_ITER,
    DSSIM_WEIGHT_LAMBDA,
    HARD_DEPTH_TAU,
    HASH_LEVELS,
    HASH_MAX_RESOLUTION,
    HASH_TABLE_SIZE_LOG2,
    L2_TOLERANCE_DELTA,
    LOCAL_TERM_WEIGHT_GAMMA,
    MLP_WIDTH,
    NEURAL_LR,
    OPACITY_LR,
    PATCH_SIZE_RANGE_PX,
    PRUNE_OPACITY,
    ROTATION_LR,
    SCALE_LR,
    SH_LR,
    SOFT_START_ITER,
    SPLIT_SCALE_DIVISOR,
    TOTAL_ITERS,
)
from depth_splat.errors import ValidationError
from depth_splat.field.primitives import ColorMode
from depth_splat.losses.objective import LossWeights

VIEW_SAMPLING_MODES = ("random", "round_robin")

# Command-line ablation switches and the config field each one turns off
ABLATION_FLAGS = {
    "no_hard": "use_hard",
    "no_soft": "use_soft",
    "no_local_norm": "use_local_norm",
    "no_global_norm": "use_global_norm",
    "no_shape_freeze": "shape_freeze",
    "no_center_freeze": "center_freeze",
    "no_depth_freeze": "depth_freeze",
}


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a training run.

    Attributes:
        total_iters: optimization steps
        soft_start_iter: first iteration at which the soft depth term is applied
        local_weight, tau, dssim_weight, tolerance: loss weights (see LossWeights)
        patch_range: inclusive (min, max) patch edge length sampled every step, pixels
        center_lr_init, center_lr_final: center learning rate decays log-linearly between these, times the scene extent
        densify_*: clone / split schedule; prune_opacity: primitives below this opacity are removed when densifying
        initial_primitives: size of the random initial field
        color_mode: "sh:<degree>" or "neural"
        use_hard, use_soft, use_local_norm, use_global_norm, shape_freeze, center_freeze, depth_freeze: ablation
            switches; with depth_freeze off both depth terms update every parameter group
        view_sampling: "random" (seeded, with replacement) or "round_robin"
        depth_views_per_step: training views that receive depth regularization each step
        eval_interval: held-out evaluation period, iterations (0 evaluates only at the end)
    """

    total_iters: int = TOTAL_ITERS
    soft_start_iter: int = SOFT_START_ITER
    local_weight: float = LOCAL_TERM_WEIGHT_GAMMA
    tau: float = HARD_DEPTH_TAU
    dssim_weight: float = DSSIM_WEIGHT_LAMBDA
    tolerance: float = L2_TOLERANCE_DELTA
    patch_range: Tuple[int, int] = PATCH_SIZE_RANGE_PX

    center_lr_init: float = CENTER_LR_INIT
    center_lr_final: float = CENTER_LR_FINAL
    scale_lr: float = SCALE_LR
    rotation_lr: float = ROTATION_LR
    opacity_lr: float = OPACITY_LR
    color_lr: float = SH_LR
    neural_lr: float = NEURAL_LR

    densify_interval: int = DENSIFY_INTERVAL
    densify_start_iter: int = DENSIFY_START_ITER
    densify_stop_iter: int = DENSIFY_STOP_ITER
    densify_grad_threshold: float = DENSIFY_GRAD_THRESHOLD
    prune_opacity: float = PRUNE_OPACITY
    split_scale_divisor: float = SPLIT_SCALE_DIVISOR
    clone_extent_fraction: float = CLONE_EXTENT_FRACTION

    seed: int = 0
    initial_primitives: int = 500
    color_mode: str = "sh:3"
    hash_levels: int = HASH_LEVELS
    hash_max_resolution: int = HASH_MAX_RESOLUTION
    hash_table_size_log2: int = HASH_TABLE_SIZE_LOG2
    mlp_width: int = MLP_WIDTH

    use_hard: bool = True
    use_soft: bool = True
    use_local_norm: bool = True
    use_global_norm: bool = True
    shape_freeze: bool = True
    center_freeze: bool = True
    depth_freeze: bool = True

    view_sampling: str = "random"
    depth_views_per_step: int = 1
    eval_interval: int = 500
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "patch_range", tuple(self.patch_range))
        _guard_config(self)

    @property
    def parsed_color_mode(self):
        return ColorMode.parse(self.color_mode)

    @property
    def loss_weights(self):
        return LossWeights(dssim=self.dssim_weight, local=self.local_weight, tolerance=self.tolerance, tau=self.tau)

    @property
    def uses_depth(self):
        return self.use_hard or self.use_soft


def _guard_config(config):
    if config.total_iters < 0:
        raise ValidationError(f"total_iters must be >= 0, got {config.total_iters}")
    # soft_start_iter == total_iters is the "soft term never applied" setting
    if not 0 <= config.soft_start_iter <= config.total_iters:
        raise ValidationError(
            f"soft_start_iter must be in [0, total_iters={config.total_iters}], got {config.soft_start_iter}"
        )
    low, high = config.patch_range
    if low < 2 or high < low:
        raise ValidationError(f"patch_range must satisfy 2 <= min <= max, got {config.patch_range}")
    for name in ("center_lr_init", "center_lr_final", "scale_lr", "rotation_lr", "opacity_lr", "color_lr", "neural_lr"):
        if not getattr(config, name) > 0:
            raise ValidationError(f"Learning rate {name} must be > 0, got {getattr(config, name)}")
    if config.densify_interval < 1:
        raise ValidationError(f"densify_interval must be >= 1, got {config.densify_interval}")
    if config.split_scale_divisor <= 1:
        raise ValidationError(f"split_scale_divisor must be > 1, got {config.split_scale_divisor}")
    if config.initial_primitives < 1:
        raise ValidationError(f"initial_primitives must be >= 1, got {config.initial_primitives}")
    if config.view_sampling not in VIEW_SAMPLING_MODES:
        raise ValidationError(f'view_sampling must be one of {VIEW_SAMPLING_MODES}, got "{config.view_sampling}"')
    if config.depth_views_per_step < 1:
        raise ValidationError(f"depth_views_per_step must be >= 1, got {config.depth_views_per_step}")
    if config.eval_interval < 0 or config.workers < 1:
        raise ValidationError("eval_interval must be >= 0 and workers >= 1")
    # Validates the string and the loss weights
    config.parsed_color_mode
    config.loss_weights


def config_from_dict(overrides):
    """TrainConfig with defaults replaced by `overrides`

    Raises:
        ValidationError: an unknown key, or a resulting config that fails validation
    """
    known = {field.name for field in dataclasses.fields(TrainConfig)}
    for key in overrides:
        if key not in known:
            raise ValidationError(f'Unknown config key "{key}"')
    return TrainConfig(**overrides)


def load_config(path):
    """Read a JSON object of TrainConfig field overrides"""
    with open(path) as config_file:
        try:
            overrides = json.load(config_file)
        except json.JSONDecodeError as error:
            raise ValidationError(f"Config file {path} is not valid JSON: {error}")
    if not isinstance(overrides, dict):
        raise ValidationError(f"Config file {path} must contain a JSON object")
    return config_from_dict(overrides)


def config_to_dict(config):
    values = dataclasses.asdict(config)
    values["patch_range"] = list(values["patch_range"])
    return values


def config_hash(config):
    """SHA-256 of the canonical JSON form of the config"""
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def with_ablations(config, **flags):
    """Copy of `config` with the named ABLATION_FLAGS applied, e.g. with_ablations(config, no_soft=True)"""
    changes = {}
    for flag, enabled in flags.items():
        if flag not in ABLATION_FLAGS:
            raise ValidationError(f'Unknown ablation "{flag}"')
        if enabled:
            changes[ABLATION_FLAGS[flag]] = False
    return dataclasses.replace(config, **changes)
