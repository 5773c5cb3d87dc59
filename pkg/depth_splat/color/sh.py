"""Real spherical harmonics up to degree 4, evaluated as polynomials in the unit direction (x, y, z).

Coefficients are stored basis-major with the rgb channel last: a degree-d color has shape ((d + 1)^2, 3), and a
GaussianField in SH mode stores it flattened as its (N, 3 (d + 1)^2) color_params.
"""

import numpy as np

from depth_splat.constants import SH_C0
from depth_splat.errors import DimensionMismatchError, ValidationError

SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)
SH_C4 = (
    2.5033429417967046,
    -1.7701307697799304,
    0.9461746957575601,
    -0.6690465435572892,
    0.10578554691520431,
    -0.6690465435572892,
    0.47308734787878004,
    -1.7701307697799304,
    0.6258357354491761,
)
MAX_DEGREE = 4

# Each basis function as a list of (coefficient, (power of x, power of y, power of z)) terms, in storage order
# fmt: off
_MONOMIALS = [
    [(SH_C0, (0, 0, 0))],
    # degree 1
    [(-SH_C1, (0, 1, 0))],
    [(SH_C1, (0, 0, 1))],
    [(-SH_C1, (1, 0, 0))],
    # degree 2
    [(SH_C2[0], (1, 1, 0))],
    [(SH_C2[1], (0, 1, 1))],
    [(2 * SH_C2[2], (0, 0, 2)), (-SH_C2[2], (2, 0, 0)), (-SH_C2[2], (0, 2, 0))],
    [(SH_C2[3], (1, 0, 1))],
    [(SH_C2[4], (2, 0, 0)), (-SH_C2[4], (0, 2, 0))],
    # degree 3
    [(3 * SH_C3[0], (2, 1, 0)), (-SH_C3[0], (0, 3, 0))],
    [(SH_C3[1], (1, 1, 1))],
    [(4 * SH_C3[2], (0, 1, 2)), (-SH_C3[2], (2, 1, 0)), (-SH_C3[2], (0, 3, 0))],
    [(2 * SH_C3[3], (0, 0, 3)), (-3 * SH_C3[3], (2, 0, 1)), (-3 * SH_C3[3], (0, 2, 1))],
    [(4 * SH_C3[4], (1, 0, 2)), (-SH_C3[4], (3, 0, 0)), (-SH_C3[4], (1, 2, 0))],
    [(SH_C3[5], (2, 0, 1)), (-SH_C3[5], (0, 2, 1))],
    [(SH_C3[6], (3, 0, 0)), (-3 * SH_C3[6], (1, 2, 0))],
    # degree 4
    [(SH_C4[0], (3, 1, 0)), (-SH_C4[0], (1, 3, 0))],
    [(3 * SH_C4[1], (2, 1, 1)), (-SH_C4[1], (0, 3, 1))],
    [(7 * SH_C4[2], (1, 1, 2)), (-SH_C4[2], (1, 1, 0))],
    [(7 * SH_C4[3], (0, 1, 3)), (-3 * SH_C4[3], (0, 1, 1))],
    [(35 * SH_C4[4], (0, 0, 4)), (-30 * SH_C4[4], (0, 0, 2)), (3 * SH_C4[4], (0, 0, 0))],
    [(7 * SH_C4[5], (1, 0, 3)), (-3 * SH_C4[5], (1, 0, 1))],
    [(7 * SH_C4[6], (2, 0, 2)), (-SH_C4[6], (2, 0, 0)), (-7 * SH_C4[6], (0, 2, 2)), (SH_C4[6], (0, 2, 0))],
    [(SH_C4[7], (3, 0, 1)), (-3 * SH_C4[7], (1, 2, 1))],
    [(SH_C4[8], (4, 0, 0)), (-6 * SH_C4[8], (2, 2, 0)), (SH_C4[8], (0, 4, 0))],
]
# fmt: on


def basis_size(degree):
    return (degree + 1) ** 2


def _guard_degree(degree):
    if degree not in range(MAX_DEGREE + 1):
        raise ValidationError(f"SH degree must be in 0..{MAX_DEGREE}, got {degree}")


def _powers(directions):
    """(M, 3, MAX_DEGREE + 1) table of x^k, y^k, z^k"""
    return directions[:, :, None] ** np.arange(MAX_DEGREE + 1)


def sh_basis(directions, degree):
    """Real SH basis values.

    Args:
        directions: (M, 3) unit vectors
        degree: 0..4
    Returns:
        (M, (degree + 1)^2)
    """
    _guard_degree(degree)
    directions = np.asarray(directions, dtype=float).reshape(-1, 3)
    powers = _powers(directions)
    basis = np.zeros((len(directions), basis_size(degree)))
    for index, terms in enumerate(_MONOMIALS[: basis_size(degree)]):
        for coefficient, (a, b, c) in terms:
            basis[:, index] += coefficient * powers[:, 0, a] * powers[:, 1, b] * powers[:, 2, c]
    return basis


def sh_basis_backward(directions, degree, basis_grads):
    """Chain (M, (degree + 1)^2) gradients w.r.t. basis values back to the (M, 3) directions"""
    _guard_degree(degree)
    directions = np.asarray(directions, dtype=float).reshape(-1, 3)
    powers = _powers(directions)
    direction_grads = np.zeros_like(directions)
    for index, terms in enumerate(_MONOMIALS[: basis_size(degree)]):
        for coefficient, exponents in terms:
            for axis in range(3):
                if exponents[axis] == 0:
                    continue
                derivative = coefficient * exponents[axis] * np.ones(len(directions))
                for other in range(3):
                    power = exponents[other] - (other == axis)
                    derivative = derivative * powers[:, other, power]
                direction_grads[:, axis] += basis_grads[:, index] * derivative
    return direction_grads


def degree_of(coefficient_count):
    """SH degree of a color stored as `coefficient_count` scalars (3 per basis function)"""
    degree = int(round(np.sqrt(coefficient_count / 3))) - 1
    if degree < 0 or 3 * basis_size(degree) != coefficient_count:
        raise DimensionMismatchError(f"{coefficient_count} color coefficients is not 3 (d + 1)^2 for any degree d")
    return degree


def sh_eval(coefficients, directions):
    """Evaluate view-dependent rgb.

    Args:
        coefficients: (M, (d + 1)^2, 3) or a single ((d + 1)^2, 3) color
        directions: (M, 3) or (3,) unit view directions
    Returns:
        rgb clamped to [0, 1], (M, 3) or (3,)
    """
    coefficients = np.asarray(coefficients, dtype=float)
    single = coefficients.ndim == 2
    coefficients = coefficients.reshape((-1,) + coefficients.shape[-2:])
    degree = degree_of(3 * coefficients.shape[1])

    basis = sh_basis(directions, degree)
    rgb = np.clip(np.einsum("mb,mbc->mc", basis, coefficients) + 0.5, 0, 1)
    return rgb[0] if single else rgb


def sh_eval_backward(coefficients, directions, rgb_grads):
    """Gradients of sh_eval w.r.t. coefficients and directions. Clamped channels pass no gradient.

    Returns:
        (coefficient_grads (M, B, 3), direction_grads (M, 3))
    """
    coefficients = np.asarray(coefficients, dtype=float)
    directions = np.asarray(directions, dtype=float).reshape(-1, 3)
    degree = degree_of(3 * coefficients.shape[1])

    basis = sh_basis(directions, degree)
    raw = np.einsum("mb,mbc->mc", basis, coefficients) + 0.5
    rgb_grads = np.where((raw >= 0) & (raw <= 1), rgb_grads, 0.0)

    coefficient_grads = basis[:, :, None] * rgb_grads[:, None, :]
    basis_grads = np.einsum("mc,mbc->mb", rgb_grads, coefficients)
    return coefficient_grads, sh_basis_backward(directions, degree, basis_grads)


def view_directions(centers, camera_center):
    """Unit vectors from the camera center to each primitive center, and the distances"""
    offsets = np.asarray(centers, dtype=float) - camera_center
    distances = np.linalg.norm(offsets, axis=-1)
    safe = np.where(distances > 0, distances, 1)
    return offsets / safe[:, None], safe


def view_directions_backward(directions, distances, direction_grads):
    """Chain gradients w.r.t. normalized directions back to primitive centers"""
    radial = np.sum(directions * direction_grads, axis=-1, keepdims=True)
    return (direction_grads - directions * radial) / distances[:, None]


def rgb_to_sh(rgb):
    """DC coefficient reproducing a constant rgb"""
    return (np.asarray(rgb, dtype=float) - 0.5) / SH_C0


def sh_to_rgb(dc):
    return np.asarray(dc, dtype=float) * SH_C0 + 0.5
