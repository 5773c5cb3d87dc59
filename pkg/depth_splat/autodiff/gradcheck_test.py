import numpy as np
import pandas as pd
import pytest

from depth_splat.color.model import NeuralColorModel
from depth_splat.conftest import random_scene
from depth_splat.errors import ValidationError
from depth_splat.field.primitives import NO_FREEZE, PARAMETER_GROUPS, ColorMode, FreezeMask
from depth_splat.render.rasterizer import COLOR, DEPTH, SOFT_DEPTH, hard_depth
import depth_splat.autodiff.gradcheck as module

ALL_KINDS = [("color", COLOR), ("depth", DEPTH), ("hard depth", hard_depth()), ("soft depth", SOFT_DEPTH)]


def _random_loss(kind, camera, seed):
    channels = (3,) if kind.name == "color" else (1,)
    weights = np.random.default_rng(seed).normal(size=(camera.height, camera.width) + channels)
    return module.weighted_sum_loss(weights)


class TestFiniteDiffCheck:
    @pytest.mark.parametrize("name, kind", ALL_KINDS)
    def test_identity_loss_on_one_primitive(self, name, kind):
        field, camera, _ = random_scene(n=1, seed=1)
        field.centers[:] = [[0.05, -0.1, 0.2]]

        report = module.finite_diff_check(field, camera, kind, module.identity_loss, h=1e-5, mask=NO_FREEZE)

        assert report.passed(rtol=1e-6), report.to_frame()

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("name, kind", ALL_KINDS)
    def test_random_scenes_unmasked(self, name, kind, seed):
        field, camera, _ = random_scene(n=6, seed=seed, width=16, height=14)

        report = module.finite_diff_check(field, camera, kind, _random_loss(kind, camera, seed), mask=NO_FREEZE)

        assert report.passed(rtol=1e-4), report.to_frame()

    def test_ten_primitive_color_scene(self):
        field, camera, _ = random_scene(n=10, seed=7, width=16, height=16)

        report = module.finite_diff_check(field, camera, COLOR, _random_loss(COLOR, camera, 7), mask=NO_FREEZE)

        assert report.passed(rtol=1e-4), report.to_frame()

    def test_view_dependent_sh_colors(self):
        color_mode = ColorMode(kind="sh", sh_degree=2)
        field, camera, _ = random_scene(n=4, seed=2, width=16, height=14, color_mode=color_mode)
        field.color_params *= 0.3

        report = module.finite_diff_check(field, camera, COLOR, _random_loss(COLOR, camera, 2), mask=NO_FREEZE)

        assert report.passed(rtol=1e-4), report.to_frame()

    def test_frozen_group_is_exactly_zero(self):
        field, camera, _ = random_scene(n=3, seed=3, width=12, height=12)

        report = module.finite_diff_check(field, camera, COLOR, mask=FreezeMask(scale=True, rotation=True))

        assert report.max_abs_error["scale"] == 0
        assert report.max_abs_error["rotation"] == 0
        assert report.passed()

    def test_report_frame_has_a_row_per_group(self):
        field, camera, _ = random_scene(n=2, seed=4, width=12, height=12)

        frame = module.finite_diff_check(field, camera, DEPTH).to_frame()

        assert isinstance(frame, pd.DataFrame)
        assert list(frame.index) == list(PARAMETER_GROUPS)
        assert (frame[["max_rel_error", "max_abs_error"]] >= 0).all().all()

    def test_non_positive_step_raises(self):
        field, camera, _ = random_scene(n=1)

        with pytest.raises(ValidationError):
            module.finite_diff_check(field, camera, DEPTH, h=0)


def test_neural_model_weight_gradients():
    field, camera, _ = random_scene(n=5, seed=5, width=16, height=14, color_mode=ColorMode(kind="neural"))
    box = ([-1.5, -1.5, -1.5], [1.5, 1.5, 1.5])
    model = NeuralColorModel.create(box, levels=4, base_resolution=2, max_resolution=16, table_size_log2=10, width=16)
    model.encoder.tables *= 1e3

    report = module.check_model_gradients(field, camera, model, _random_loss(COLOR, camera, 5), h=1e-6)

    assert set(report.max_rel_error) == set(model.parameters())
    assert report.passed(rtol=1e-4), report.to_frame()
