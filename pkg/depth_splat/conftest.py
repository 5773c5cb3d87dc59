import numpy as np
import pytest
from scipy.special import logit

from depth_splat.dataset.synth import SceneSpec, synth_scene
from depth_splat.field.camera import Camera, look_at
from depth_splat.field.primitives import ColorMode, GaussianField, IDENTITY_QUATERNION
from depth_splat.train.config import TrainConfig


def axis_camera(width=16, height=16, focal=100.0):
    """Identity pose; the optical axis passes through the center of pixel (width // 2, height // 2)"""
    return Camera(
        fx=focal,
        fy=focal,
        cx=width // 2 + 0.5,
        cy=height // 2 + 0.5,
        width=width,
        height=height,
        rotation=np.eye(3),
        translation=np.zeros(3),
    )


def on_axis_field(depths, opacities, log_scale=np.log(0.02), color_mode=ColorMode(kind="sh", sh_degree=0)):
    """Small isotropic primitives stacked along the optical axis of `axis_camera`"""
    n = len(depths)
    return GaussianField(
        centers=[[0.0, 0.0, depth] for depth in depths],
        log_scales=np.full((n, 3), log_scale),
        rotations=np.tile(IDENTITY_QUATERNION, (n, 1)),
        opacity_logits=logit(np.asarray(opacities, dtype=float)),
        color_params=np.zeros((n, color_mode.feature_dim)),
        color_mode=color_mode,
    )


def random_scene(n=10, seed=0, width=24, height=20, color_mode=ColorMode(kind="sh", sh_degree=0)):
    """A random field in front of a look-at camera, plus random per-primitive rgb.

    The image size is not a multiple of the tile size so that ragged tiles get exercised.
    """
    rng = np.random.default_rng(seed)
    field = GaussianField(
        centers=rng.uniform(-1, 1, size=(n, 3)),
        log_scales=np.log(rng.uniform(0.1, 0.3, size=(n, 3))),
        rotations=rng.normal(size=(n, 4)),
        opacity_logits=rng.normal(0, 1.5, size=n),
        color_params=rng.normal(0, 0.3, size=(n, color_mode.feature_dim)),
        color_mode=color_mode,
    )
    camera = look_at(eye=[0.3, -0.2, -4.0], target=[0, 0, 0], up=[0, -1, 0], fx=20, fy=22, width=width, height=height)
    colors = rng.uniform(0, 1, size=(n, 3))
    return field, camera, colors


@pytest.fixture
def scene():
    return random_scene()


TINY_SCENE = SceneSpec(primitives=30, width=16, height=16, focal=16.0, train_views=2, test_views=1)


def tiny_dataset(seed=0, spec=TINY_SCENE):
    """(Dataset, ground-truth field) of a 16x16 synthetic scene with two training views and one test view"""
    return synth_scene(spec, seed)


def tiny_config(**overrides):
    """A TrainConfig that runs a handful of steps on a tiny_dataset, densifying once"""
    values = dict(
        total_iters=4,
        soft_start_iter=2,
        initial_primitives=20,
        color_mode="sh:0",
        eval_interval=2,
        densify_start_iter=2,
        densify_stop_iter=4,
        densify_interval=2,
    )
    values.update(overrides)
    return TrainConfig(**values)
