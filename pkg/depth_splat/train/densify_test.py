import numpy as np
import pytest

from depth_splat.conftest import on_axis_field
from depth_splat.field.primitives import PARAMETER_GROUPS
from depth_splat.train.config import TrainConfig
from depth_splat.train.optimizer import Adam
import depth_splat.train.densify as module

EXTENT = 10.0  # clone / split cutoff = 0.01 * 10 = 0.1 world units
SMALL = np.log(0.02)
LARGE = np.log(1.0)


def _field(log_scale=SMALL, opacities=(0.5, 0.5, 0.5)):
    return on_axis_field(depths=[2.0, 3.0, 4.0][: len(opacities)], opacities=list(opacities), log_scale=log_scale)


def _stats(grad_norms):
    grad_norms = np.asarray(grad_norms, dtype=float)
    return module.DensifyStats(grad_norm_sum=grad_norms.copy(), counts=np.ones(len(grad_norms), dtype=int))


def _stepped_optimizer(field):
    """Adam with one step of moments for every parameter group, rows distinguishable by value"""
    optimizer = Adam({group: 0.01 for group in PARAMETER_GROUPS})
    params = {group: field.parameter(group).copy() for group in PARAMETER_GROUPS}
    grads = {group: np.arange(params[group].size, dtype=float).reshape(params[group].shape) + 1 for group in params}
    optimizer.step(params, grads)
    return optimizer


def _densify(field, stats, optimizer=None, **config_overrides):
    optimizer = optimizer or Adam({group: 0.01 for group in PARAMETER_GROUPS})
    config = TrainConfig(**config_overrides)
    return module.densify_and_prune(field, stats, optimizer, config, EXTENT, np.random.default_rng(0))


class TestDensifyStats:
    def test_accumulates_visible_norms_only(self):
        stats = module.DensifyStats.zeros(3)

        stats.accumulate(np.array([[3.0, 4.0], [1.0, 0.0], [6.0, 8.0]]), np.array([True, False, True]))
        stats.accumulate(np.array([[0.0, 1.0], [0.0, 2.0], [0.0, 0.0]]), np.array([True, True, True]))

        np.testing.assert_allclose(stats.grad_norm_sum, [6.0, 2.0, 10.0])
        np.testing.assert_array_equal(stats.counts, [2, 1, 2])
        np.testing.assert_allclose(stats.mean_grad_norms(), [3.0, 2.0, 5.0])

    def test_never_visible_primitives_have_zero_mean(self):
        np.testing.assert_array_equal(module.DensifyStats.zeros(2).mean_grad_norms(), [0.0, 0.0])


class TestDensifyAndPrune:
    def test_nothing_active_and_nothing_transparent_is_a_no_op(self):
        field = _field()

        densified, summary = _densify(field, module.DensifyStats.zeros(3))

        assert summary == module.DensifySummary(cloned=0, split=0, pruned=0, primitives=3)
        np.testing.assert_array_equal(densified.centers, field.centers)
        np.testing.assert_array_equal(densified.log_scales, field.log_scales)
        assert densified.version == field.version + 1

    def test_transparent_primitives_are_pruned(self):
        field = _field(opacities=(0.5, 0.001, 0.5))

        densified, summary = _densify(field, module.DensifyStats.zeros(3))

        assert (summary.pruned, len(densified)) == (1, 2)
        np.testing.assert_array_equal(densified.centers[:, 2], [2.0, 4.0])

    def test_small_active_primitives_are_cloned(self):
        field = _field()

        densified, summary = _densify(field, _stats([1.0, 0.0, 0.0]))

        assert (summary.cloned, summary.split, len(densified)) == (1, 0, 4)
        np.testing.assert_array_equal(densified.centers[:3], field.centers)
        np.testing.assert_array_equal(densified.log_scales[3], field.log_scales[0])
        # The clone is displaced within a few standard deviations of its parent
        assert 0 < np.linalg.norm(densified.centers[3] - field.centers[0]) < 5 * 0.02 * np.sqrt(3)

    def test_large_active_primitives_are_split_into_two_smaller_children(self):
        field = _field(log_scale=LARGE)

        densified, summary = _densify(field, _stats([0.0, 1.0, 0.0]))

        assert (summary.cloned, summary.split, len(densified)) == (0, 1, 4)
        np.testing.assert_array_equal(densified.centers[:2], field.centers[[0, 2]])
        np.testing.assert_allclose(densified.scales[2:], np.full((2, 3), 1 / 1.6))
        np.testing.assert_array_equal(densified.opacity_logits[2:], field.opacity_logits[[1, 1]])

    def test_split_adds_one_primitive_per_split_parent(self):
        field = _field(log_scale=LARGE)

        densified, summary = _densify(field, _stats([1.0, 1.0, 1.0]))

        assert len(densified) == len(field) + summary.split == 6

    def test_threshold_is_applied_to_the_mean_norm(self):
        field = _field()
        stats = module.DensifyStats(grad_norm_sum=np.array([1.0, 0.0, 0.0]), counts=np.array([10, 1, 1]))

        _, summary = _densify(field, stats, densify_grad_threshold=0.2)

        assert summary.cloned == 0

    def test_optimizer_moments_follow_the_rows(self):
        field = _field(opacities=(0.001, 0.5, 0.5))
        optimizer = _stepped_optimizer(field)
        before = {group: optimizer.first[group].copy() for group in PARAMETER_GROUPS}

        densified, _ = _densify(field, _stats([0.0, 0.0, 1.0]), optimizer)

        # Row 0 pruned, rows 1 and 2 kept, a fresh clone of row 2 appended
        for group in PARAMETER_GROUPS:
            moments = optimizer.first[group]
            assert len(moments) == len(densified) == 3
            np.testing.assert_array_equal(moments[:2], before[group][[1, 2]])
            np.testing.assert_array_equal(moments[2], np.zeros_like(moments[2]))
            np.testing.assert_array_equal(optimizer.second[group][2], np.zeros_like(moments[2]))

    def test_pruning_everything_warns(self, caplog):
        field = _field(opacities=(0.001, 0.001))

        densified, summary = _densify(field, module.DensifyStats.zeros(2))

        assert len(densified) == 0
        assert summary.pruned == 2
        assert "every primitive" in caplog.text

    @pytest.mark.parametrize("name,seed", [("seed 0", 0), ("seed 7", 7)])
    def test_same_rng_state_gives_same_result(self, name, seed):
        field = _field(log_scale=LARGE)
        results = [
            module.densify_and_prune(
                field,
                _stats([1.0, 1.0, 0.0]),
                Adam({group: 0.01 for group in PARAMETER_GROUPS}),
                TrainConfig(),
                EXTENT,
                np.random.default_rng(seed),
            )[0]
            for _ in range(2)
        ]

        np.testing.assert_array_equal(results[0].centers, results[1].centers)
