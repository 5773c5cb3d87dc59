import json

import numpy as np
import pytest

from depth_splat.conftest import TINY_SCENE, tiny_dataset
from depth_splat.errors import ValidationError
import depth_splat.dataset.synth as module


def _spec(**overrides):
    values = dict(primitives=30, width=16, height=16, focal=16.0, train_views=2, test_views=1)
    values.update(overrides)
    return module.SceneSpec(**values)


class TestSceneSpec:
    def test_tuples_are_normalized(self):
        spec = module.SceneSpec(depth_range=[1, 3], look_at=[0, 1, 2])

        assert spec.depth_range == (1.0, 3.0)
        assert spec.look_at == (0.0, 1.0, 2.0)

    @pytest.mark.parametrize(
        "name,overrides",
        [
            ("unknown kind", {"kind": "cubes"}),
            ("no primitives", {"primitives": 0}),
            ("no training views", {"train_views": 0}),
            ("negative test views", {"test_views": -1}),
            ("zero near depth", {"depth_range": (0.0, 2.0)}),
            ("far before near", {"depth_range": (3.0, 2.0)}),
            ("zero focal", {"focal": 0.0}),
            ("negative noise", {"mono_noise": -0.1}),
        ],
    )
    def test_invalid_spec_raises(self, name, overrides):
        with pytest.raises(ValidationError):
            module.SceneSpec(**overrides)


class TestLoadSceneSpec:
    def test_reads_overrides(self, tmpdir):
        path = tmpdir.join("scene.json")
        path.write(json.dumps({"kind": "sphere_shell", "primitives": 50, "depth_range": [1.5, 2.5]}))

        spec = module.load_scene_spec(str(path))

        assert spec == module.SceneSpec(kind=module.SPHERE_SHELL, primitives=50, depth_range=(1.5, 2.5))

    @pytest.mark.parametrize(
        "name,contents,message",
        [
            ("malformed json", "{kind:", "not valid JSON"),
            ("not an object", '["sphere_shell"]', "JSON object"),
            ("unknown key", '{"views": 3}', "views"),
        ],
    )
    def test_bad_file_raises(self, tmpdir, name, contents, message):
        path = tmpdir.join("scene.json")
        path.write(contents)

        with pytest.raises(ValidationError, match=message):
            module.load_scene_spec(str(path))


class TestGroundTruthField:
    @pytest.mark.parametrize("name,kind", [(kind, kind) for kind in module.GENERATOR_KINDS])
    def test_every_generator_gives_an_opaque_degree_zero_field(self, name, kind):
        field = module.ground_truth_field(_spec(kind=kind, primitives=40), np.random.default_rng(0))

        assert len(field) > 0
        assert field.color_mode == module.GROUND_TRUTH_COLOR_MODE
        np.testing.assert_allclose(field.opacities, module.GROUND_TRUTH_OPACITY)
        assert np.all(np.isfinite(field.centers))

    def test_sphere_shell_spans_the_depth_range(self):
        spec = _spec(kind=module.SPHERE_SHELL, primitives=100, depth_range=(2.0, 4.0))

        field = module.ground_truth_field(spec, np.random.default_rng(0))

        center = np.array([0.0, 0.0, 0.0])
        np.testing.assert_allclose(np.linalg.norm(field.centers - center, axis=1), 1.0)

    def test_textured_planes_sit_at_evenly_spaced_depths(self):
        spec = _spec(kind=module.TEXTURED_PLANES, primitives=50, planes=3, depth_range=(2.0, 4.0))

        field = module.ground_truth_field(spec, np.random.default_rng(0))

        # The central camera sits at z = -ring_radius
        np.testing.assert_allclose(np.unique(field.centers[:, 2]), [-1.0, 0.0, 1.0])


class TestCameraRing:
    def test_every_camera_sits_on_the_ring_and_faces_look_at(self):
        spec = _spec(train_views=3, test_views=2, look_at=(0.5, 0.0, 1.0))

        train, test = module.camera_ring(spec)

        assert (len(train), len(test)) == (3, 2)
        for camera in train + test:
            offset = np.asarray(spec.look_at) - camera.center
            np.testing.assert_allclose(np.linalg.norm(offset), spec.ring_radius)
            np.testing.assert_allclose(camera.rotation[2], offset / spec.ring_radius, atol=1e-12)

    def test_test_views_sit_between_training_views(self):
        train, test = module.camera_ring(_spec(train_views=2, test_views=1))

        xs = [camera.center[0] for camera in train]
        assert min(xs) < test[0].center[0] < max(xs)

    def test_zero_arc_with_several_cameras_is_degenerate(self):
        with pytest.raises(ValidationError, match="Degenerate"):
            module.camera_ring(_spec(arc_degrees=0.0))

    def test_zero_arc_with_a_single_camera_is_fine(self):
        train, test = module.camera_ring(_spec(arc_degrees=0.0, train_views=1, test_views=0))

        assert (len(train), len(test)) == (1, 0)


class TestSynthScene:
    def test_views_and_depths(self):
        dataset, field = tiny_dataset()

        assert (len(dataset.train), len(dataset.test)) == (TINY_SCENE.train_views, TINY_SCENE.test_views)
        assert len(field) == TINY_SCENE.primitives
        assert dataset.has_mono_depth
        assert all(view.gt_depth is not None for view in dataset.train + dataset.test)
        assert all(view.mono_depth is None for view in dataset.test)
        assert [view.name for view in dataset.train] == ["train_000", "train_001"]

    def test_identity_corruption_is_exact(self):
        dataset, _ = tiny_dataset()

        for view in dataset.train:
            np.testing.assert_array_equal(view.mono_depth.depth, view.gt_depth.depth)

    def test_affine_corruption(self):
        dataset, _ = module.synth_scene(_spec(mono_scale=2.0, mono_shift=0.5), seed=0)

        for view in dataset.train:
            np.testing.assert_allclose(view.mono_depth.depth, 2.0 * view.gt_depth.depth + 0.5)

    def test_noisy_corruption_stays_non_negative(self):
        dataset, _ = module.synth_scene(_spec(mono_noise=0.5), seed=0)

        mono, gt = dataset.train[0].mono_depth.depth, dataset.train[0].gt_depth.depth
        assert np.all(mono >= 0)
        assert not np.array_equal(mono, gt)

    def test_same_seed_gives_the_same_dataset(self):
        spec = _spec(mono_noise=0.1)
        (first, _), (second, _) = module.synth_scene(spec, seed=4), module.synth_scene(spec, seed=4)

        for a, b in zip(first.train + first.test, second.train + second.test):
            np.testing.assert_array_equal(a.image.rgb, b.image.rgb)
        np.testing.assert_array_equal(first.train[0].mono_depth.depth, second.train[0].mono_depth.depth)

    def test_different_seeds_give_different_clusters(self):
        (first, _), (second, _) = module.synth_scene(_spec(), seed=1), module.synth_scene(_spec(), seed=2)

        assert not np.array_equal(first.train[0].image.rgb, second.train[0].image.rgb)

    def test_box_contains_the_ground_truth_field(self):
        dataset, field = tiny_dataset()

        lower, upper = dataset.box
        assert np.all(field.centers >= lower)
        assert np.all(field.centers <= upper)

    def test_textured_planes_depth_is_bimodal(self):
        spec = _spec(kind=module.TEXTURED_PLANES, primitives=200, train_views=3, test_views=0)

        dataset, _ = module.synth_scene(spec, seed=0)

        central = dataset.train[1].gt_depth
        covered = central.depth[central.accum_alpha > 0.9]
        assert covered.size > 0.5 * central.depth.size
        # Near plane pixels lie within 2.5 of the camera, far plane pixels beyond 0.9 * 4
        assert np.mean(covered < 3.0) > 0.2
        assert np.mean(covered > 3.4) > 0.2
