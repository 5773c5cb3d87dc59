import numpy as np
import pytest

from depth_splat.conftest import random_scene
from depth_splat.field.camera import Camera
from depth_splat.field.primitives import GaussianPrimitive
import depth_splat.field.projection as module


def _identity_camera(cx=32.0, cy=32.0, z_near=0.01):
    return Camera(
        fx=100.0,
        fy=100.0,
        cx=cx,
        cy=cy,
        width=64,
        height=64,
        rotation=np.eye(3),
        translation=np.zeros(3),
        z_near=z_near,
    )


def _isotropic(center, sigma=0.05):
    return GaussianPrimitive(
        center=np.asarray(center, dtype=float),
        log_scale=np.full(3, np.log(sigma)),
        rotation=np.array([1.0, 0, 0, 0]),
        opacity_logit=0.0,
        color_params=np.zeros(3),
    )


class TestProject:
    def test_on_axis_primitive(self):
        sigma, depth = 0.05, 2.5
        projected = module.project(_isotropic([0, 0, depth], sigma), _identity_camera())

        np.testing.assert_allclose(projected.mean2d, [32, 32])
        expected_variance = (100 * sigma / depth) ** 2
        np.testing.assert_allclose(projected.cov2d, np.diag([expected_variance] * 2), atol=1e-12)

    def test_distance_and_view_depth(self):
        projected = module.project(_isotropic([0, 0, 2]), _identity_camera())

        assert projected.dist == 2.0
        assert projected.view_z == 2.0

    def test_behind_near_plane_is_culled(self):
        camera = _identity_camera(z_near=0.2)

        assert module.project(_isotropic([0, 0, 0.1]), camera) is None

    def test_conic_inverts_dilated_covariance(self):
        projected = module.project(_isotropic([0.1, -0.2, 3], 0.1), _identity_camera(), dilation=0.3)

        np.testing.assert_allclose(projected.conic @ (projected.cov2d + 0.3 * np.eye(2)), np.eye(2), atol=1e-12)

    def test_radius_is_three_sigma_of_dilated_covariance(self):
        projected = module.project(_isotropic([0, 0, 2], 0.04), _identity_camera(), dilation=0.3)

        assert projected.radius == pytest.approx(3 * np.sqrt(4.0 + 0.3))

    def test_radius_bounds_the_undilated_support(self):
        field, camera, _ = random_scene(n=12, seed=6)

        projections = module.project_field(field, camera)

        undilated = 3 * np.sqrt(np.linalg.eigvalsh(projections.cov2d)[:, -1])
        assert np.all(projections.radius[projections.visible] >= undilated[projections.visible])

    def test_principal_point_shift_moves_mean_only(self):
        primitive = _isotropic([0.3, -0.1, 2.0])
        before = module.project(primitive, _identity_camera())
        after = module.project(primitive, _identity_camera(cx=35.0, cy=30.5))

        np.testing.assert_allclose(after.mean2d - before.mean2d, [3.0, -1.5], atol=1e-12)
        np.testing.assert_array_equal(after.cov2d, before.cov2d)


class TestGaussianWeight:
    def _projected(self, conic=np.eye(2), radius=3.0):
        return module.Projected2D(
            mean2d=np.array([10.0, 10.0]), cov2d=np.eye(2), conic=conic, view_z=1.0, dist=1.0, radius=radius
        )

    @pytest.mark.parametrize(
        "name, pixel, expected",
        [
            ("at the mean", [10, 10], 1.0),
            ("offset sqrt 2", [10 + np.sqrt(2), 10], np.exp(-1)),
            ("beyond the support radius", [13.5, 10], 0.0),
        ],
    )
    def test_gaussian_weight(self, name, pixel, expected):
        assert module.gaussian_weight(self._projected(), pixel) == pytest.approx(expected)


def test_pair_weights_match_the_diagonal_of_the_full_grid():
    field, camera, _ = random_scene(n=6, seed=2)
    projections = module.project_field(field, camera)
    screen = (projections.mean2d, projections.conic, projections.radius)
    pixels = np.random.default_rng(0).uniform(0, 20, size=(6, 2))

    grid, grid_offsets = module.gaussian_weights(*screen, pixels)
    pairs, pair_offsets = module.gaussian_pair_weights(*screen, pixels)

    np.testing.assert_array_equal(pairs, np.diag(grid))
    np.testing.assert_array_equal(pair_offsets, grid_offsets[np.arange(6), np.arange(6)])


def test_project_field_backward_matches_central_differences():
    field, camera, _ = random_scene(n=4, seed=11)
    rng = np.random.default_rng(12)
    weight_mean2d = rng.normal(size=(4, 2))
    weight_conic = rng.normal(size=(4, 2, 2))
    weight_dist = rng.normal(size=4)

    def objective(field):
        projections = module.project_field(field, camera)
        return (
            np.sum(weight_mean2d * projections.mean2d)
            + np.sum(weight_conic * projections.conic)
            + np.sum(weight_dist * projections.dist)
        )

    projections = module.project_field(field, camera)
    assert projections.visible.all()
    analytic = dict(
        zip(
            ("centers", "log_scales", "rotations"),
            module.project_field_backward(field, camera, projections, weight_mean2d, weight_conic, weight_dist),
        )
    )

    step = 1e-6
    for attribute, grads in analytic.items():
        values = getattr(field, attribute)
        for index in np.ndindex(values.shape):
            bumped_up, bumped_down = field.copy(), field.copy()
            getattr(bumped_up, attribute)[index] += step
            getattr(bumped_down, attribute)[index] -= step
            expected = (objective(bumped_up) - objective(bumped_down)) / (2 * step)
            assert grads[index] == pytest.approx(expected, rel=1e-4, abs=1e-6), (attribute, index)


def test_culled_primitives_get_zero_screen_gradients():
    camera = _identity_camera(z_near=0.5)
    field = random_scene(n=2, seed=0)[0]
    field.centers[:] = [[0, 0, 0.2], [0, 0, 2.0]]
    projections = module.project_field(field, camera)

    center_grads, log_scale_grads, rotation_grads = module.project_field_backward(
        field, camera, projections, np.ones((2, 2)), np.ones((2, 2, 2)), np.zeros(2)
    )

    assert not projections.visible[0]
    np.testing.assert_array_equal(center_grads[0], 0)
    np.testing.assert_array_equal(log_scale_grads[0], 0)
    np.testing.assert_array_equal(rotation_grads[0], 0)
    assert np.any(center_grads[1] != 0)
