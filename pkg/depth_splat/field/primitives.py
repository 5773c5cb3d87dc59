"""Gaussian primitives: storage, activations, covariance construction and random initialization.

A GaussianField stores its primitives as parallel numpy arrays (one row per primitive) so that everything downstream
can be vectorized. Scales live in log space and opacities as logits; use the `scales` and `opacities` properties for
activated values.
"""

from dataclasses import dataclass, field as dataclass_field
from typing import NamedTuple

import numpy as np
from scipy.special import expit, logit

from depth_splat.constants import INITIAL_OPACITY
from depth_splat.errors import DegenerateRotationError, EmptyFieldError, ValidationError

PARAMETER_GROUPS = ("center", "scale", "rotation", "opacity", "color")

# Maps each parameter group to the GaussianField attribute that stores it
GROUP_ATTRIBUTES = {
    "center": "centers",
    "scale": "log_scales",
    "rotation": "rotations",
    "opacity": "opacity_logits",
    "color": "color_params",
}

IDENTITY_QUATERNION = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class ColorMode:
    """How primitives store color. kind is "sh" (spherical harmonics of `sh_degree`) or "neural"."""

    kind: str = "sh"
    sh_degree: int = 3

    def __post_init__(self):
        if self.kind not in ("sh", "neural"):
            raise ValidationError(f'Unknown color mode "{self.kind}"; expected "sh" or "neural"')
        if self.kind == "sh" and self.sh_degree not in (0, 1, 2, 3):
            raise ValidationError(f"SH degree must be in 0..3, got {self.sh_degree}")

    @property
    def feature_dim(self):
        """Number of per-primitive color parameters (K). Neural mode keeps color in the renderer, so K = 0."""
        if self.kind == "neural":
            return 0
        return 3 * (self.sh_degree + 1) ** 2

    @classmethod
    def parse(cls, text):
        """Parse a CLI color mode string: "neural" or "sh:<degree>" """
        if text == "neural":
            return cls(kind="neural")
        if text.startswith("sh:"):
            try:
                return cls(kind="sh", sh_degree=int(text[len("sh:") :]))
            except ValueError:
                pass
        raise ValidationError(f'Color mode "{text}" is not "neural" or "sh:<degree>"')

    def __str__(self):
        return "neural" if self.kind == "neural" else f"sh:{self.sh_degree}"


class GaussianPrimitive(NamedTuple):
    center: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float
    color_params: np.ndarray

    @property
    def scale(self):
        return np.exp(self.log_scale)

    @property
    def opacity(self):
        return expit(self.opacity_logit)


@dataclass(frozen=True)
class FreezeMask:
    """Which parameter groups are frozen (receive exactly zero gradient)."""

    center: bool = False
    scale: bool = False
    rotation: bool = False
    opacity: bool = False
    color: bool = False

    def is_frozen(self, group):
        return getattr(self, group)

    def thawed(self, *groups):
        """Copy of this mask with `groups` unfrozen"""
        return FreezeMask(**{g: self.is_frozen(g) and g not in groups for g in PARAMETER_GROUPS})


NO_FREEZE = FreezeMask()
# Hard depth reads neither opacity nor color, and shape freezing keeps scale and rotation out of depth supervision
HARD_DEPTH_FREEZE = FreezeMask(scale=True, rotation=True, opacity=True, color=True)
# Soft depth tunes opacity alone
SOFT_DEPTH_FREEZE = FreezeMask(center=True, scale=True, rotation=True, color=True)


@dataclass
class GaussianField:
    """An ordered set of anisotropic 3D Gaussian primitives, stored as parallel arrays.

    Attributes:
        centers: (N, 3) world-space centers
        log_scales: (N, 3) log of per-axis scales
        rotations: (N, 4) quaternions (w, x, y, z); not necessarily unit length
        opacity_logits: (N,) opacity before the sigmoid
        color_params: (N, K) color parameters, K = color_mode.feature_dim
        color_mode: ColorMode shared by every primitive
        version: incremented by the trainer on every mutation; keys the neural color cache
    """

    centers: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    color_params: np.ndarray
    color_mode: ColorMode = ColorMode()
    version: int = dataclass_field(default=0, compare=False)

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=float).reshape(-1, 3)
        n = len(self.centers)
        self.log_scales = np.asarray(self.log_scales, dtype=float).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=float).reshape(n, 4)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=float).reshape(n)
        self.color_params = np.asarray(self.color_params, dtype=float).reshape(n, self.color_mode.feature_dim)

    def __len__(self):
        return len(self.centers)

    @property
    def scales(self):
        return np.exp(self.log_scales)

    @property
    def opacities(self):
        return expit(self.opacity_logits)

    def primitive(self, index):
        return GaussianPrimitive(
            center=self.centers[index],
            log_scale=self.log_scales[index],
            rotation=self.rotations[index],
            opacity_logit=float(self.opacity_logits[index]),
            color_params=self.color_params[index],
        )

    def parameter(self, group):
        return getattr(self, GROUP_ATTRIBUTES[group])

    def copy(self):
        return GaussianField(
            centers=self.centers.copy(),
            log_scales=self.log_scales.copy(),
            rotations=self.rotations.copy(),
            opacity_logits=self.opacity_logits.copy(),
            color_params=self.color_params.copy(),
            color_mode=self.color_mode,
            version=self.version,
        )

    def select(self, keep):
        """New field with only the primitives where boolean mask / index array `keep` selects them"""
        return GaussianField(
            centers=self.centers[keep],
            log_scales=self.log_scales[keep],
            rotations=self.rotations[keep],
            opacity_logits=self.opacity_logits[keep],
            color_params=self.color_params[keep],
            color_mode=self.color_mode,
            version=self.version + 1,
        )

    def bump_version(self):
        self.version += 1

    @classmethod
    def empty(cls, color_mode=ColorMode()):
        return cls(
            centers=np.zeros((0, 3)),
            log_scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            opacity_logits=np.zeros(0),
            color_params=np.zeros((0, color_mode.feature_dim)),
            color_mode=color_mode,
        )

    @classmethod
    def from_primitives(cls, primitives, color_mode=ColorMode()):
        primitives = list(primitives)
        if not primitives:
            return cls.empty(color_mode)
        return cls(
            centers=[p.center for p in primitives],
            log_scales=[p.log_scale for p in primitives],
            rotations=[p.rotation for p in primitives],
            opacity_logits=[p.opacity_logit for p in primitives],
            color_params=[p.color_params for p in primitives],
            color_mode=color_mode,
        )


def _guard_quaternions_nonzero(quaternions):
    norms = np.linalg.norm(quaternions, axis=-1)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise DegenerateRotationError(
            f"{np.count_nonzero((norms == 0) | ~np.isfinite(norms))} quaternion(s) have zero or non-finite norm"
        )
    return norms


def rotation_matrices(quaternions):
    """Rotation matrices of (N, 4) quaternions (w, x, y, z), normalized first.

    Returns:
        (N, 3, 3) rotation matrices
    Raises:
        DegenerateRotationError: a quaternion has zero norm
    """
    quaternions = np.asarray(quaternions, dtype=float).reshape(-1, 4)
    norms = _guard_quaternions_nonzero(quaternions)
    w, x, y, z = (quaternions / norms[:, None]).T

    # fmt: off
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1),
    ], axis=1)
    # fmt: on


def _rotation_matrix_backward(quaternions, rotation_grads):
    """Gradient w.r.t. the raw (unnormalized) quaternions given gradients w.r.t. their rotation matrices"""
    norms = _guard_quaternions_nonzero(quaternions)
    unit = quaternions / norms[:, None]
    w, x, y, z = unit.T
    g = rotation_grads

    # fmt: off
    unit_grads = 2 * np.stack([
        -z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1],
        y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
        + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2],
        -2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
        - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2],
        -2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
        + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1],
    ], axis=-1)
    # fmt: on

    # Chain through q / |q|: project out the radial component
    radial = np.sum(unit * unit_grads, axis=-1, keepdims=True)
    return (unit_grads - unit * radial) / norms[:, None]


def covariances(log_scales, quaternions):
    """3D covariances R S S^T R^T for (N, 3) log scales and (N, 4) quaternions.

    Returns:
        (N, 3, 3) symmetric positive semidefinite matrices
    """
    rotations = rotation_matrices(quaternions)
    half = rotations * np.exp(np.asarray(log_scales, dtype=float).reshape(-1, 3))[:, None, :]
    covariance = half @ np.transpose(half, (0, 2, 1))
    return 0.5 * (covariance + np.transpose(covariance, (0, 2, 1)))


def covariances_backward(log_scales, quaternions, covariance_grads):
    """Chain (N, 3, 3) gradients w.r.t. covariances back to log scales and raw quaternions.

    Returns:
        (log_scale_grads (N, 3), quaternion_grads (N, 4))
    """
    log_scales = np.asarray(log_scales, dtype=float).reshape(-1, 3)
    quaternions = np.asarray(quaternions, dtype=float).reshape(-1, 4)
    scales = np.exp(log_scales)
    rotations = rotation_matrices(quaternions)
    half = rotations * scales[:, None, :]

    symmetric_grads = 0.5 * (covariance_grads + np.transpose(covariance_grads, (0, 2, 1)))
    half_grads = 2 * symmetric_grads @ half

    scale_grads = np.sum(half_grads * rotations, axis=1)
    rotation_grads = half_grads * scales[:, None, :]
    return scale_grads * scales, _rotation_matrix_backward(quaternions, rotation_grads)


def covariance_from(log_scale, quaternion):
    """3x3 covariance of a single primitive from its log scale and (unnormalized) rotation quaternion"""
    return covariances(np.reshape(log_scale, (1, 3)), np.reshape(quaternion, (1, 4)))[0]


def _guard_aabb(aabb):
    lower, upper = (np.asarray(corner, dtype=float) for corner in aabb)
    if lower.shape != (3,) or upper.shape != (3,) or not np.all(upper > lower):
        raise ValidationError(f"Bounding box {aabb} is not a nondegenerate (lower, upper) pair of 3-vectors")
    return lower, upper


def init_random(n, aabb, seed, color_mode=ColorMode()):
    """Randomly initialize a field with `n` primitives uniformly distributed in a bounding box.

    Args:
        n: number of primitives, at least 1
        aabb: (lower corner, upper corner) of the box, world units
        seed: integer seed; the same seed always produces the same field
        color_mode: Optional (default SH degree 3)
    Returns:
        GaussianField with isotropic scales of (box diagonal) / n^(1/3), opacity 0.1, identity rotations and
        zeroed color parameters (which render as mid-gray in SH mode)
    Raises:
        EmptyFieldError: n < 1
    """
    if n < 1:
        raise EmptyFieldError(f"Cannot initialize a field with {n} primitives")
    lower, upper = _guard_aabb(aabb)

    rng = np.random.default_rng(seed)
    centers = rng.uniform(lower, upper, size=(n, 3))

    initial_scale = np.linalg.norm(upper - lower) / np.cbrt(n)

    return GaussianField(
        centers=centers,
        log_scales=np.full((n, 3), np.log(initial_scale)),
        rotations=np.tile(IDENTITY_QUATERNION, (n, 1)),
        opacity_logits=np.full(n, logit(INITIAL_OPACITY)),
        color_params=np.zeros((n, color_mode.feature_dim)),
        color_mode=color_mode,
    )
