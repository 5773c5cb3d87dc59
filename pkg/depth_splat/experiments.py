"""Paired ablation runs on synthetic scenes: train each variant on the same seeded scenes, compare held-out metrics.

results = run_ablation(REGULARIZATION_VARIANTS, seeds=range(5), config=TrainConfig(total_iters=2000, ...))
compare_variants(results, "full", "no_regularization", "depth_mae")
"""

import dataclasses
import logging
from dataclasses import dataclass, field as dataclass_field
from typing import Dict, Optional

import pandas as pd

from depth_splat.dataset.synth import SceneSpec, synth_scene
from depth_splat.evaluate import METRIC_COLUMNS
from depth_splat.train.config import with_ablations
from depth_splat.train.trainer import fit

logger = logging.getLogger(__name__)

# Metrics where a larger value is better; the rest are errors
HIGHER_IS_BETTER = {"psnr": True, "ssim": True, "depth_mae": False, "depth_rmse": False}


@dataclass(frozen=True)
class Variant:
    """Attributes:
    name: row label in result tables
    ablations: with_ablations flags, e.g. {"no_soft": True}
    scene_overrides: SceneSpec fields replaced for this variant, e.g. the monocular depth corruption
    color_mode: Optional TrainConfig.color_mode used instead of the base config's
    """

    name: str
    ablations: Dict[str, bool] = dataclass_field(default_factory=dict)
    scene_overrides: Dict[str, object] = dataclass_field(default_factory=dict)
    color_mode: Optional[str] = None


REGULARIZATION_VARIANTS = [Variant("full"), Variant("no_regularization", {"no_hard": True, "no_soft": True})]
NORMALIZATION_VARIANTS = [
    Variant("global_and_local"),
    Variant("global_only", {"no_local_norm": True}),
    Variant("local_only", {"no_global_norm": True}),
]
FREEZING_VARIANTS = [
    Variant("shape_freeze"),
    Variant("no_shape_freeze", {"no_shape_freeze": True}),
    Variant("no_center_freeze", {"no_center_freeze": True}),
    # Both depth terms update every parameter group
    Variant("all_parameters", {"no_depth_freeze": True}),
]
SCALE_FREE_VARIANTS = [
    Variant("ground_truth_depth"),
    Variant("corrupted_depth", scene_overrides={"mono_scale": 0.5, "mono_shift": 3.0}),
]
COLOR_VARIANTS = [Variant("neural", color_mode="neural"), Variant("spherical_harmonics", color_mode="sh:3")]


def run_variant(variant, seed, config, scene_spec=SceneSpec(), settings=None):
    """Synthesize the scene for `seed`, train `variant` on it and return the aggregate held-out metrics"""
    spec = dataclasses.replace(scene_spec, **variant.scene_overrides)
    dataset, _ = synth_scene(spec, seed)
    variant_config = dataclasses.replace(with_ablations(config, **variant.ablations), seed=seed)
    if variant.color_mode is not None:
        variant_config = dataclasses.replace(variant_config, color_mode=variant.color_mode)
    result = fit(variant_config, dataset, settings=settings, progress=False)
    return result.log.iloc[-1][METRIC_COLUMNS].to_dict()


def run_ablation(variants, seeds, config, scene_spec=SceneSpec(), settings=None):
    """Train every variant on every seed's scene.

    Returns:
        tidy pandas.DataFrame with columns variant, seed and METRIC_COLUMNS, one row per (variant, seed)
    """
    rows = []
    for seed in seeds:
        for variant in variants:
            metrics = run_variant(variant, seed, config, scene_spec, settings)
            logger.info("Seed %d, %s: %s", seed, variant.name, metrics)
            rows.append({"variant": variant.name, "seed": seed, **metrics})
    return pd.DataFrame(rows, columns=["variant", "seed"] + METRIC_COLUMNS)


def compare_variants(results, candidate, baseline, metric):
    """Per-seed comparison of two variants on one metric.

    Args:
        results: DataFrame from run_ablation
        candidate, baseline: variant names
        metric: one of METRIC_COLUMNS
    Returns:
        (DataFrame indexed by seed with candidate, baseline and a boolean `candidate_wins` column, number of wins)
    """
    values = results.pivot(index="seed", columns="variant", values=metric)[[candidate, baseline]]
    if HIGHER_IS_BETTER[metric]:
        wins = values[candidate] > values[baseline]
    else:
        wins = values[candidate] < values[baseline]
    comparison = values.assign(candidate_wins=wins)
    return comparison, int(wins.sum())
