"""Perspective projection of 3D Gaussians to screen-space 2D Gaussians (EWA first-order approximation)."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from depth_splat.constants import DILATION_FLOOR_PX2, SUPPORT_SIGMAS
from depth_splat.field.primitives import ColorMode, GaussianField, covariances, covariances_backward


@dataclass
class Projected2D:
    """A single projected primitive.

    Attributes:
        mean2d: (2,) pixels
        cov2d: (2, 2) undilated screen covariance, pixels^2
        conic: (2, 2) inverse of cov2d + dilation * I
        view_z: camera-space depth, world units
        dist: ||mu - o||, world units
        radius: support radius in pixels (3 sigma of the larger dilated eigenvalue)
    """

    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray
    view_z: float
    dist: float
    radius: float


@dataclass
class Projections:
    """Every primitive of a field projected into one camera, as parallel arrays.

    Culled primitives (camera-space z at or in front of z_near) have `visible` False and zeroed screen quantities.
    """

    mean2d: np.ndarray  # (N, 2)
    cov2d: np.ndarray  # (N, 2, 2)
    conic: np.ndarray  # (N, 2, 2)
    view_z: np.ndarray  # (N,)
    dist: np.ndarray  # (N,)
    radius: np.ndarray  # (N,)
    visible: np.ndarray  # (N,) bool

    def __len__(self):
        return len(self.view_z)

    def primitive(self, index) -> Optional[Projected2D]:
        if not self.visible[index]:
            return None
        return Projected2D(
            mean2d=self.mean2d[index],
            cov2d=self.cov2d[index],
            conic=self.conic[index],
            view_z=float(self.view_z[index]),
            dist=float(self.dist[index]),
            radius=float(self.radius[index]),
        )


def _camera_space(centers, camera):
    return centers @ camera.rotation.T + camera.translation


def _pinhole_jacobians(points, camera):
    px, py, pz = points.T
    jacobians = np.zeros((len(points), 2, 3))
    jacobians[:, 0, 0] = camera.fx / pz
    jacobians[:, 0, 2] = -camera.fx * px / pz**2
    jacobians[:, 1, 1] = camera.fy / pz
    jacobians[:, 1, 2] = -camera.fy * py / pz**2
    return jacobians


def _safe_points(points, visible):
    # Culled primitives still flow through the vectorized math; park them at z = 1 so nothing divides by zero
    return np.where(visible[:, None], points, np.array([0.0, 0.0, 1.0]))


def project_field(field: GaussianField, camera, dilation=DILATION_FLOOR_PX2):
    """Project every primitive of `field` into `camera`.

    Args:
        field: GaussianField
        camera: Camera
        dilation: Optional (default 0.3 px^2). Added to the screen covariance diagonal before inversion
    Returns:
        Projections. `radius` is 3 sigma of the larger eigenvalue of the dilated covariance, the one the conic
        inverts, so it is never smaller than the 3 sigma bound of the undilated cov2d and every nonzero basis value
        lies inside it.
    """
    n = len(field)
    points = _camera_space(field.centers, camera)
    visible = points[:, 2] > camera.z_near
    safe = _safe_points(points, visible)

    mean2d = np.stack(
        [camera.fx * safe[:, 0] / safe[:, 2] + camera.cx, camera.fy * safe[:, 1] / safe[:, 2] + camera.cy], axis=-1
    )
    screen_jacobians = _pinhole_jacobians(safe, camera) @ camera.rotation
    cov3d = covariances(field.log_scales, field.rotations) if n else np.zeros((0, 3, 3))
    cov2d = screen_jacobians @ cov3d @ np.transpose(screen_jacobians, (0, 2, 1))
    cov2d = 0.5 * (cov2d + np.transpose(cov2d, (0, 2, 1)))

    a = cov2d[:, 0, 0] + dilation
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1] + dilation
    determinant = a * c - b * b
    conic = np.stack([np.stack([c, -b], axis=-1), np.stack([-b, a], axis=-1)], axis=1) / determinant[:, None, None]

    middle = 0.5 * (a + c)
    largest_eigenvalue = middle + np.sqrt(np.maximum(middle**2 - determinant, 0))
    radius = SUPPORT_SIGMAS * np.sqrt(largest_eigenvalue)

    hidden = ~visible
    mean2d[hidden] = 0
    cov2d[hidden] = 0
    conic[hidden] = 0
    radius[hidden] = 0

    return Projections(
        mean2d=mean2d,
        cov2d=cov2d,
        conic=conic,
        view_z=points[:, 2],
        dist=np.linalg.norm(field.centers - camera.center, axis=-1),
        radius=radius,
        visible=visible,
    )


def project(primitive, camera, dilation=DILATION_FLOOR_PX2) -> Optional[Projected2D]:
    """Project a single GaussianPrimitive. Returns None when it is culled by the near plane."""
    field = GaussianField.from_primitives([primitive], color_mode=_mode_for_params(primitive.color_params))
    return project_field(field, camera, dilation).primitive(0)


def _mode_for_params(color_params):
    k = np.size(color_params)
    if k == 0:
        return ColorMode(kind="neural")
    return ColorMode(kind="sh", sh_degree=int(round(np.sqrt(k / 3))) - 1)


def gaussian_weights(mean2d, conic, radius, pixels):
    """Screen-space Gaussian basis values of several primitives at several pixels.

    Args:
        mean2d: (N, 2)
        conic: (N, 2, 2)
        radius: (N,)
        pixels: (P, 2) pixel coordinates
    Returns:
        (weights (N, P), offsets (N, P, 2)) where weights are exp(-1/2 d^T conic d) clamped to [0, 1] and zero beyond
        each primitive's support radius
    """
    offsets = pixels[None, :, :] - mean2d[:, None, :]
    a, b, c = conic[:, 0, 0, None], conic[:, 0, 1, None], conic[:, 1, 1, None]
    weights = _basis_values(a, b, c, radius[:, None], offsets[..., 0], offsets[..., 1])
    return weights, offsets


def gaussian_pair_weights(mean2d, conic, radius, pixels):
    """Like gaussian_weights, but row i pairs primitive i with pixel i only.

    Args:
        mean2d: (M, 2)
        conic: (M, 2, 2)
        radius: (M,)
        pixels: (M, 2)
    Returns:
        (weights (M,), offsets (M, 2))
    """
    offsets = pixels - mean2d
    weights = _basis_values(conic[:, 0, 0], conic[:, 0, 1], conic[:, 1, 1], radius, offsets[:, 0], offsets[:, 1])
    return weights, offsets


def _basis_values(a, b, c, radius, dx, dy):
    power = -0.5 * (a * dx * dx + 2 * b * dx * dy + c * dy * dy)
    inside = dx * dx + dy * dy <= radius**2
    return np.where(inside, np.clip(np.exp(np.minimum(power, 0)), 0, 1), 0.0)


def gaussian_weight(projected: Projected2D, pixel):
    """Value of one projected Gaussian at one pixel coordinate, in [0, 1]"""
    weights, _ = gaussian_weights(
        projected.mean2d[None], projected.conic[None], np.array([projected.radius]), np.reshape(pixel, (1, 2))
    )
    return float(weights[0, 0])


def project_field_backward(field: GaussianField, camera, projections, grad_mean2d, grad_conic, grad_dist):
    """Chain gradients w.r.t. screen quantities back to primitive parameters.

    Args:
        field: the projected GaussianField
        camera: Camera used for the projection
        projections: Projections from project_field
        grad_mean2d: (N, 2)
        grad_conic: (N, 2, 2) gradient w.r.t. each conic matrix entry
        grad_dist: (N,) gradient w.r.t. ||mu - o||
    Returns:
        (center_grads (N, 3), log_scale_grads (N, 3), rotation_grads (N, 4)); culled primitives receive zero
        gradient through the screen quantities
    """
    n = len(field)
    visible = projections.visible
    points = _safe_points(_camera_space(field.centers, camera), visible)
    px, py, pz = points.T
    fx, fy = camera.fx, camera.fy

    grad_mean2d = np.where(visible[:, None], grad_mean2d, 0)
    grad_conic = np.where(visible[:, None, None], grad_conic, 0)

    # conic = inverse(dilated cov2d): d(conic) = -conic d(cov) conic
    conic = projections.conic
    grad_cov2d = -conic @ grad_conic @ conic
    grad_cov2d = 0.5 * (grad_cov2d + np.transpose(grad_cov2d, (0, 2, 1)))

    screen_jacobians = _pinhole_jacobians(points, camera) @ camera.rotation
    cov3d = covariances(field.log_scales, field.rotations) if n else np.zeros((0, 3, 3))

    grad_cov3d = np.transpose(screen_jacobians, (0, 2, 1)) @ grad_cov2d @ screen_jacobians
    grad_screen_jacobians = 2 * grad_cov2d @ screen_jacobians @ cov3d
    grad_jacobians = grad_screen_jacobians @ camera.rotation.T

    grad_points = np.zeros((n, 3))
    grad_points[:, 0] = grad_mean2d[:, 0] * fx / pz - grad_jacobians[:, 0, 2] * fx / pz**2
    grad_points[:, 1] = grad_mean2d[:, 1] * fy / pz - grad_jacobians[:, 1, 2] * fy / pz**2
    grad_points[:, 2] = (
        -grad_mean2d[:, 0] * fx * px / pz**2
        - grad_mean2d[:, 1] * fy * py / pz**2
        - grad_jacobians[:, 0, 0] * fx / pz**2
        + grad_jacobians[:, 0, 2] * 2 * fx * px / pz**3
        - grad_jacobians[:, 1, 1] * fy / pz**2
        + grad_jacobians[:, 1, 2] * 2 * fy * py / pz**3
    )

    center_grads = grad_points @ camera.rotation
    offsets = field.centers - camera.center
    dist = np.linalg.norm(offsets, axis=-1)
    safe_dist = np.where(dist > 0, dist, 1)
    center_grads += (np.asarray(grad_dist)[:, None] * offsets) / safe_dist[:, None]

    if n:
        log_scale_grads, rotation_grads = covariances_backward(field.log_scales, field.rotations, grad_cov3d)
    else:
        log_scale_grads, rotation_grads = np.zeros((0, 3)), np.zeros((0, 4))
    return center_grads, log_scale_grads, rotation_grads
