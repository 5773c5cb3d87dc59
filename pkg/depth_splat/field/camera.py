"""Pinhole cameras with world-to-camera poses.

Convention: right-handed, the camera looks down +z in camera space with +x right and +y down in the image. Pixel
(u, v) covers [u, u + 1) x [v, v + 1); its center is at (u + 0.5, v + 0.5).
"""

from dataclasses import dataclass

import numpy as np

from depth_splat.constants import DEFAULT_Z_NEAR
from depth_splat.errors import ValidationError

_ORTHONORMAL_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray  # R_wc, 3x3
    translation: np.ndarray  # t_wc, 3-vector
    z_near: float = DEFAULT_Z_NEAR

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        _guard_camera_is_valid(self)

    @property
    def center(self):
        """Camera center o = -R^T t in world coordinates"""
        return -self.rotation.T @ self.translation

    @property
    def world_to_camera(self):
        """4x4 world-to-camera matrix"""
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def pixel_centers(self):
        """(height, width, 2) array of pixel-center coordinates x_p"""
        us, vs = np.meshgrid(np.arange(self.width) + 0.5, np.arange(self.height) + 0.5)
        return np.stack([us, vs], axis=-1)

    def with_principal_point(self, cx, cy):
        return Camera(self.fx, self.fy, cx, cy, self.width, self.height, self.rotation, self.translation, self.z_near)

    def to_dict(self):
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "world_to_camera": self.world_to_camera.tolist(),
            "z_near": self.z_near,
        }

    @classmethod
    def from_dict(cls, camera_dict):
        world_to_camera = np.asarray(camera_dict["world_to_camera"], dtype=float)
        if world_to_camera.shape != (4, 4):
            raise ValidationError(f"world_to_camera must be 4x4, got shape {world_to_camera.shape}")
        return cls(
            fx=float(camera_dict["fx"]),
            fy=float(camera_dict["fy"]),
            cx=float(camera_dict["cx"]),
            cy=float(camera_dict["cy"]),
            width=int(camera_dict["width"]),
            height=int(camera_dict["height"]),
            rotation=world_to_camera[:3, :3],
            translation=world_to_camera[:3, 3],
            z_near=float(camera_dict.get("z_near", DEFAULT_Z_NEAR)),
        )


def _guard_camera_is_valid(camera):
    if not (camera.fx > 0 and camera.fy > 0):
        raise ValidationError(f"Focal lengths must be positive, got fx={camera.fx}, fy={camera.fy}")
    if not (camera.width >= 1 and camera.height >= 1):
        raise ValidationError(f"Image size must be at least 1x1, got {camera.width}x{camera.height}")
    if not camera.z_near > 0:
        raise ValidationError(f"z_near must be positive, got {camera.z_near}")
    rotation = camera.rotation
    if not np.allclose(rotation @ rotation.T, np.eye(3), atol=_ORTHONORMAL_TOLERANCE) or not np.isclose(
        np.linalg.det(rotation), 1.0, atol=_ORTHONORMAL_TOLERANCE
    ):
        raise ValidationError("Camera rotation must be orthonormal with determinant +1")


def look_at(eye, target, up, fx, fy, width, height, cx=None, cy=None, z_near=DEFAULT_Z_NEAR):
    """Camera at `eye` looking at `target`, with `up` pointing towards the top of the image.

    Args:
        eye, target, up: world-space 3-vectors
        fx, fy: focal lengths in pixels
        width, height: image size in pixels
        cx, cy: Optional principal point. Defaults to the image center.
    Returns:
        Camera
    """
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward /= np.linalg.norm(forward)

    right = np.cross(forward, np.asarray(up, dtype=float))
    right_norm = np.linalg.norm(right)
    if right_norm < 1e-9:
        raise ValidationError(f"up vector {up} is parallel to the viewing direction")
    right /= right_norm
    down = np.cross(forward, right)

    # Rows are the camera axes expressed in world coordinates
    rotation = np.stack([right, down, forward])
    return Camera(
        fx=fx,
        fy=fy,
        cx=width / 2 if cx is None else cx,
        cy=height / 2 if cy is None else cy,
        width=width,
        height=height,
        rotation=rotation,
        translation=-rotation @ eye,
        z_near=z_near,
    )
