import numpy as np
import pandas as pd
import pytest

from depth_splat.conftest import TINY_SCENE, tiny_config
from depth_splat.evaluate import METRIC_COLUMNS
import depth_splat.experiments as module


def _ablation(variants, seeds=(0,)):
    return module.run_ablation(variants, seeds, tiny_config(), TINY_SCENE)


def _mock_fit(mocker):
    log = pd.DataFrame([[20.0, 0.8, 0.1, 0.2]], index=[4], columns=METRIC_COLUMNS)
    return mocker.patch.object(module, "fit", return_value=mocker.Mock(log=log))


class TestRunVariant:
    def test_passes_seed_ablations_and_scene_overrides(self, mocker):
        fit = _mock_fit(mocker)
        synth = mocker.spy(module, "synth_scene")
        variant = module.Variant("corrupted", {"no_soft": True}, {"mono_scale": 0.5})

        metrics = module.run_variant(variant, 3, tiny_config(), TINY_SCENE)

        assert metrics == {"psnr": 20.0, "ssim": 0.8, "depth_mae": 0.1, "depth_rmse": 0.2}
        spec, seed = synth.call_args[0]
        assert (spec.mono_scale, spec.width, seed) == (0.5, TINY_SCENE.width, 3)
        config = fit.call_args[0][0]
        assert (config.seed, config.use_soft, config.use_hard) == (3, False, True)
        assert fit.call_args[1]["progress"] is False

    @pytest.mark.parametrize(
        "name,variant,field_name,expected",
        [
            ("local normalization only", module.NORMALIZATION_VARIANTS[2], "use_global_norm", False),
            ("without center freezing", module.FREEZING_VARIANTS[2], "center_freeze", False),
            ("depth terms update all parameters", module.FREEZING_VARIANTS[3], "depth_freeze", False),
            ("neural color", module.COLOR_VARIANTS[0], "color_mode", "neural"),
            ("spherical harmonics color", module.COLOR_VARIANTS[1], "color_mode", "sh:3"),
        ],
    )
    def test_variant_reaches_the_training_config(self, mocker, name, variant, field_name, expected):
        fit = _mock_fit(mocker)

        module.run_variant(variant, 0, tiny_config(), TINY_SCENE)

        assert getattr(fit.call_args[0][0], field_name) == expected

    def test_color_mode_is_kept_without_a_variant_override(self, mocker):
        fit = _mock_fit(mocker)

        module.run_variant(module.Variant("base"), 0, tiny_config(color_mode="sh:1"), TINY_SCENE)

        assert fit.call_args[0][0].color_mode == "sh:1"


class TestRunAblation:
    def test_one_row_per_variant_and_seed(self):
        results = _ablation(module.REGULARIZATION_VARIANTS, seeds=[0, 1])

        assert list(results.columns) == ["variant", "seed"] + METRIC_COLUMNS
        assert list(zip(results["variant"], results["seed"])) == [
            ("full", 0),
            ("no_regularization", 0),
            ("full", 1),
            ("no_regularization", 1),
        ]
        assert np.all(np.isfinite(results["psnr"]))

    def test_is_deterministic(self):
        pd.testing.assert_frame_equal(_ablation(module.FREEZING_VARIANTS), _ablation(module.FREEZING_VARIANTS))


class TestCompareVariants:
    @pytest.fixture
    def results(self):
        return pd.DataFrame(
            {
                "variant": ["full", "none", "full", "none", "full", "none"],
                "seed": [0, 0, 1, 1, 2, 2],
                "psnr": [20.0, 18.0, 17.0, 19.0, 21.0, 20.0],
                "ssim": [0.8, 0.7, 0.6, 0.7, 0.9, 0.8],
                "depth_mae": [0.1, 0.3, 0.2, 0.1, 0.1, 0.2],
                "depth_rmse": [0.2, 0.4, 0.3, 0.2, 0.2, 0.3],
            }
        )

    @pytest.mark.parametrize(
        "name,metric,wins,expected",
        [
            ("higher psnr wins", "psnr", 2, [True, False, True]),
            ("lower depth error wins", "depth_mae", 2, [True, False, True]),
        ],
    )
    def test_wins_follow_the_metric_direction(self, results, name, metric, wins, expected):
        comparison, count = module.compare_variants(results, "full", "none", metric)

        assert count == wins
        assert list(comparison["candidate_wins"]) == expected
        assert list(comparison.index) == [0, 1, 2]

    def test_swapping_candidate_and_baseline(self, results):
        _, count = module.compare_variants(results, "none", "full", "psnr")

        assert count == 1

    def test_ties_are_not_wins(self, results):
        results.loc[results["variant"] == "none", "psnr"] = results.loc[results["variant"] == "full", "psnr"].values

        _, count = module.compare_variants(results, "full", "none", "psnr")

        assert count == 0
