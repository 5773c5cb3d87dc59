"""Multi-resolution hash grid encoding of world positions.

Each level overlays a grid of resolution N_l on the encoder's bounding box. The 8 grid corners around a position
are looked up in that level's table through a spatial hash, and their features are trilinearly interpolated. Level
outputs are concatenated.
"""

from dataclasses import dataclass

import numpy as np

from depth_splat.constants import (
    HASH_BASE_RESOLUTION,
    HASH_FEATURES_PER_LEVEL,
    HASH_LEVELS,
    HASH_MAX_RESOLUTION,
    HASH_TABLE_SIZE_LOG2,
)
from depth_splat.errors import DimensionMismatchError, ValidationError

HASH_PRIMES = np.array([1, 2654435761, 805459861], dtype=np.uint64)
TABLE_INIT_RANGE = 1e-4

# Offsets of the 8 cell corners, bit k of the corner number selects the upper neighbour along axis k
_CORNER_OFFSETS = np.array([[(corner >> axis) & 1 for axis in range(3)] for corner in range(8)])


def level_resolutions(levels, base_resolution, max_resolution):
    """Geometrically growing grid resolutions, floor(base * b^l) with b chosen so the last level is max_resolution"""
    if levels == 1:
        return np.array([base_resolution])
    growth = (np.log(max_resolution) - np.log(base_resolution)) / (levels - 1)
    resolutions = np.floor(np.exp(np.log(base_resolution) + growth * np.arange(levels)) + 1e-6).astype(int)
    if np.any(np.diff(resolutions) <= 0):
        raise ValidationError(
            f"{levels} levels between resolutions {base_resolution} and {max_resolution} are not strictly increasing"
        )
    return resolutions


@dataclass
class SparseTableGrad:
    """Gradient w.r.t. a few rows of the flattened (levels * table_size, features) table array

    Attributes:
        rows: (K,) sorted unique flat row indices (level * table_size + entry)
        values: (K, features)
    """

    rows: np.ndarray
    values: np.ndarray

    def to_dense(self, table_shape):
        levels, table_size, features = table_shape
        dense = np.zeros((levels * table_size, features))
        dense[self.rows] = self.values
        return dense.reshape(table_shape)

    def scaled(self, factor):
        return SparseTableGrad(self.rows, self.values * factor)

    def __add__(self, other):
        rows, inverse = np.unique(np.concatenate([self.rows, other.rows]), return_inverse=True)
        values = np.zeros((len(rows), self.values.shape[1]))
        np.add.at(values, inverse, np.concatenate([self.values, other.values]))
        return SparseTableGrad(rows, values)


@dataclass
class _EncodingContext:
    rows: np.ndarray  # (L, M, 8) flat table rows of every corner
    weights: np.ndarray  # (L, M, 8) trilinear weights
    fractions: np.ndarray  # (L, M, 3) position within the cell
    inside: np.ndarray  # (M,) False where the position was clamped to the box


class HashGridEncoder:
    """Multi-resolution hash encoder.

    Attributes:
        box: (lower, upper) world-space corners; positions outside are clamped onto the box
        resolutions: (levels,) grid resolutions
        tables: (levels, table_size, features_per_level) learned features
    """

    def __init__(
        self,
        box,
        levels=HASH_LEVELS,
        base_resolution=HASH_BASE_RESOLUTION,
        max_resolution=HASH_MAX_RESOLUTION,
        table_size_log2=HASH_TABLE_SIZE_LOG2,
        features_per_level=HASH_FEATURES_PER_LEVEL,
        seed=0,
    ):
        lower, upper = (np.asarray(corner, dtype=float) for corner in box)
        if lower.shape != (3,) or upper.shape != (3,) or not np.all(upper > lower):
            raise ValidationError(f"Encoder box {box} is not a nondegenerate (lower, upper) pair of 3-vectors")
        self.lower = lower
        self.upper = upper
        self.resolutions = level_resolutions(levels, base_resolution, max_resolution)
        self.table_size = 2**table_size_log2
        rng = np.random.default_rng(seed)
        self.tables = rng.uniform(
            -TABLE_INIT_RANGE, TABLE_INIT_RANGE, size=(levels, self.table_size, features_per_level)
        )

    @property
    def levels(self):
        return len(self.resolutions)

    @property
    def features_per_level(self):
        return self.tables.shape[-1]

    @property
    def output_dim(self):
        return self.levels * self.features_per_level

    def _hash(self, corners):
        """Table entries of (..., 3) integer grid corners"""
        corners = corners.astype(np.uint64)
        hashed = (
            (corners[..., 0] * HASH_PRIMES[0]) ^ (corners[..., 1] * HASH_PRIMES[1]) ^ (corners[..., 2] * HASH_PRIMES[2])
        )
        return (hashed % np.uint64(self.table_size)).astype(np.int64)

    def _context(self, positions):
        positions = np.asarray(positions, dtype=float)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise DimensionMismatchError(f"Expected (M, 3) positions, got shape {positions.shape}")
        unit = (positions - self.lower) / (self.upper - self.lower)
        inside = np.all((unit >= 0) & (unit <= 1), axis=-1)
        unit = np.clip(unit, 0, 1)

        levels = self.levels
        rows = np.zeros((levels, len(positions), 8), dtype=np.int64)
        weights = np.zeros((levels, len(positions), 8))
        fractions = np.zeros((levels, len(positions), 3))
        for level, resolution in enumerate(self.resolutions):
            scaled = unit * resolution
            cell = np.minimum(np.floor(scaled), resolution - 1)
            fraction = scaled - cell
            corners = cell[:, None, :].astype(np.int64) + _CORNER_OFFSETS[None, :, :]
            corner_weights = np.where(_CORNER_OFFSETS[None, :, :] == 1, fraction[:, None, :], 1 - fraction[:, None, :])

            rows[level] = level * self.table_size + self._hash(corners)
            weights[level] = np.prod(corner_weights, axis=-1)
            fractions[level] = fraction
        return _EncodingContext(rows=rows, weights=weights, fractions=fractions, inside=inside)

    def _interpolate(self, context):
        flat_tables = self.tables.reshape(-1, self.features_per_level)
        # (L, M, F) per level, then concatenated level by level
        per_level = np.einsum("lmc,lmcf->lmf", context.weights, flat_tables[context.rows])
        return np.transpose(per_level, (1, 0, 2)).reshape(per_level.shape[1], -1)

    def encode(self, positions):
        """(M, 3) world positions -> (M, levels * features_per_level) encodings"""
        return self._interpolate(self._context(positions))

    def encode_with_context(self, positions):
        context = self._context(positions)
        return self._interpolate(context), context

    def backward(self, context, encoding_grads):
        """Gradients of the encoding w.r.t. the tables and the positions.

        Args:
            context: from encode_with_context
            encoding_grads: (M, levels * features_per_level)
        Returns:
            (SparseTableGrad, position_grads (M, 3)); clamped positions get zero position gradient
        """
        levels, n_positions, _ = context.weights.shape
        features = self.features_per_level
        per_level_grads = np.transpose(encoding_grads.reshape(n_positions, levels, features), (1, 0, 2))

        contributions = context.weights[..., None] * per_level_grads[:, :, None, :]
        rows, inverse = np.unique(context.rows.ravel(), return_inverse=True)
        values = np.zeros((len(rows), features))
        np.add.at(values, inverse, contributions.reshape(-1, features))

        flat_tables = self.tables.reshape(-1, features)
        corner_features = flat_tables[context.rows]  # (L, M, 8, F)
        corner_dots = np.einsum("lmcf,lmf->lmc", corner_features, per_level_grads)

        unit_grads = np.zeros((n_positions, 3))
        for axis in range(3):
            # d(weight)/d(fraction along axis): the other two factors times +-1
            others = [other for other in range(3) if other != axis]
            partial = np.where(_CORNER_OFFSETS[:, axis] == 1, 1.0, -1.0)[None, None, :]
            for other in others:
                partial = partial * np.where(
                    _CORNER_OFFSETS[None, None, :, other] == 1,
                    context.fractions[:, :, None, other],
                    1 - context.fractions[:, :, None, other],
                )
            unit_grads[:, axis] = np.sum(np.sum(corner_dots * partial, axis=-1) * self.resolutions[:, None], axis=0)

        position_grads = np.where(context.inside[:, None], unit_grads / (self.upper - self.lower), 0.0)
        return SparseTableGrad(rows=rows, values=values), position_grads
