"""Per-primitive color production for a camera: spherical harmonics or the neural color renderer.

Both models expose the same surface:
    colors(field, camera) -> (N, 3) rgb
    backward(field, camera, rgb_grads) -> ColorGrads
    parameters() -> name -> array of model-owned weights (empty for SH)
"""

import logging
import weakref
from dataclasses import dataclass, field as dataclass_field
from typing import Dict

import numpy as np

from depth_splat.color.hash_grid import HashGridEncoder
from depth_splat.color.mlp import ColorMlp
from depth_splat.color.sh import (
    basis_size,
    sh_basis,
    sh_basis_backward,
    sh_eval,
    sh_eval_backward,
    view_directions,
    view_directions_backward,
)
from depth_splat.constants import (
    DIRECTION_SH_DEGREE,
    ENCODER_BOX_PADDING,
    HASH_BASE_RESOLUTION,
    HASH_FEATURES_PER_LEVEL,
    HASH_LEVELS,
    HASH_MAX_RESOLUTION,
    HASH_TABLE_SIZE_LOG2,
    MLP_STAGE_A_LAYERS,
    MLP_STAGE_B_LAYERS,
    MLP_WIDTH,
)
from depth_splat.errors import ModeMismatchError, StaleCacheError

logger = logging.getLogger(__name__)

HASH_TABLES = "hash_tables"


@dataclass
class ColorGrads:
    """Gradients of a color objective.

    Attributes:
        color_params: (N, K) w.r.t. per-primitive color parameters
        centers: (N, 3) w.r.t. primitive centers (through the view direction and, in neural mode, the hash encoding)
        model: name -> gradient for model-owned weights; hash tables use a SparseTableGrad
    """

    color_params: np.ndarray
    centers: np.ndarray
    model: Dict[str, object] = dataclass_field(default_factory=dict)


class ShColorModel:
    """Colors stored per primitive as SH coefficients of the field's degree"""

    kind = "sh"
    version = 0

    def __init__(self, degree):
        self.degree = degree

    def _guard_mode(self, field):
        mode = field.color_mode
        if mode.kind != "sh" or mode.sh_degree != self.degree:
            raise ModeMismatchError(f"SH degree {self.degree} color model cannot color a {mode} field")

    def _coefficients(self, field):
        return field.color_params.reshape(len(field), basis_size(self.degree), 3)

    def colors(self, field, camera):
        self._guard_mode(field)
        if len(field) == 0:
            return np.zeros((0, 3))
        directions, _ = view_directions(field.centers, camera.center)
        return sh_eval(self._coefficients(field), directions)

    def backward(self, field, camera, rgb_grads):
        self._guard_mode(field)
        if len(field) == 0:
            return ColorGrads(color_params=np.zeros((0, field.color_mode.feature_dim)), centers=np.zeros((0, 3)))
        directions, distances = view_directions(field.centers, camera.center)
        coefficient_grads, direction_grads = sh_eval_backward(self._coefficients(field), directions, rgb_grads)
        return ColorGrads(
            color_params=coefficient_grads.reshape(len(field), -1),
            centers=view_directions_backward(directions, distances, direction_grads),
        )

    def parameters(self):
        return {}

    def bump_version(self):
        pass


class NeuralColorModel:
    """Hash-grid encoding of the primitive center, stage-A MLP feature (cached), stage-B MLP with view direction.

    The stage-A features are cached per field snapshot. The cache is keyed by the field object, its version and this
    model's version, so any change to centers (which bumps the field version) or to weights (`bump_version`)
    invalidates it.
    """

    kind = "neural"

    def __init__(self, encoder: HashGridEncoder, mlp: ColorMlp, direction_degree=DIRECTION_SH_DEGREE, use_cache=True):
        self.encoder = encoder
        self.mlp = mlp
        self.direction_degree = direction_degree
        self.use_cache = use_cache
        self.version = 0
        self._cache_key = None
        self._cached_features = None

    @classmethod
    def create(
        cls,
        box,
        seed=0,
        levels=HASH_LEVELS,
        base_resolution=HASH_BASE_RESOLUTION,
        max_resolution=HASH_MAX_RESOLUTION,
        table_size_log2=HASH_TABLE_SIZE_LOG2,
        features_per_level=HASH_FEATURES_PER_LEVEL,
        width=MLP_WIDTH,
        stage_a_layers=MLP_STAGE_A_LAYERS,
        stage_b_layers=MLP_STAGE_B_LAYERS,
        direction_degree=DIRECTION_SH_DEGREE,
        use_cache=True,
    ):
        encoder = HashGridEncoder(
            box, levels, base_resolution, max_resolution, table_size_log2, features_per_level, seed=seed
        )
        mlp = ColorMlp(
            encoder.output_dim,
            basis_size(direction_degree),
            width=width,
            stage_a_layers=stage_a_layers,
            stage_b_layers=stage_b_layers,
            seed=seed + 1,
        )
        return cls(encoder, mlp, direction_degree=direction_degree, use_cache=use_cache)

    def _guard_mode(self, field):
        if field.color_mode.kind != "neural":
            raise ModeMismatchError(f"The neural color model cannot color a {field.color_mode} field")

    def bump_version(self):
        """Call after every weight update"""
        self.version += 1

    def _key(self, field):
        return (field.version, self.version, len(field))

    def _is_fresh(self, field):
        return self._cache_key is not None and self._cache_key[0]() is field and self._cache_key[1:] == self._key(field)

    def cached_features(self, field):
        """Stage-A features from the cache.

        Raises:
            StaleCacheError: nothing is cached for this field snapshot and model version
        """
        if not self._is_fresh(field):
            raise StaleCacheError(
                f"No cached features for field version {field.version} and color model version {self.version}"
            )
        return self._cached_features

    def features(self, field):
        """Stage-A features of every primitive, reusing the cache when it is fresh"""
        self._guard_mode(field)
        if self.use_cache and self._is_fresh(field):
            return self._cached_features
        features = self.mlp.features(self.encoder.encode(field.centers))
        if self.use_cache:
            logger.debug("Caching stage-A features for field version %d", field.version)
            self._cache_key = (weakref.ref(field),) + self._key(field)
            self._cached_features = features
        return features

    def _direction_encodings(self, field, camera):
        directions, distances = view_directions(field.centers, camera.center)
        return sh_basis(directions, self.direction_degree), directions, distances

    def colors(self, field, camera):
        self._guard_mode(field)
        if len(field) == 0:
            return np.zeros((0, 3))
        direction_encodings, _, _ = self._direction_encodings(field, camera)
        return self.mlp.rgb(self.features(field), direction_encodings)

    def backward(self, field, camera, rgb_grads):
        self._guard_mode(field)
        if len(field) == 0:
            return ColorGrads(color_params=np.zeros((0, 0)), centers=np.zeros((0, 3)))

        encodings, encoding_context = self.encoder.encode_with_context(field.centers)
        features, feature_activations = self.mlp.features_with_activations(encodings)
        direction_encodings, directions, distances = self._direction_encodings(field, camera)
        _, rgb_activations = self.mlp.rgb_with_activations(features, direction_encodings)

        model_grads, feature_grads, direction_encoding_grads = self.mlp.rgb_backward(rgb_activations, rgb_grads)
        stage_a_grads, encoding_grads = self.mlp.features_backward(feature_activations, feature_grads)
        model_grads.update(stage_a_grads)
        table_grads, position_grads = self.encoder.backward(encoding_context, encoding_grads)
        model_grads[HASH_TABLES] = table_grads

        direction_grads = sh_basis_backward(directions, self.direction_degree, direction_encoding_grads)
        center_grads = position_grads + view_directions_backward(directions, distances, direction_grads)
        return ColorGrads(color_params=np.zeros((len(field), 0)), centers=center_grads, model=model_grads)

    def parameters(self):
        named = {HASH_TABLES: self.encoder.tables}
        named.update(self.mlp.parameters())
        return named


def encoder_box(scene_box, camera_centers, padding=ENCODER_BOX_PADDING):
    """Bounding box of the scene box and the training camera centers, padded by `padding` of its size per side"""
    points = np.vstack([np.asarray(scene_box, dtype=float).reshape(2, 3), np.asarray(camera_centers).reshape(-1, 3)])
    lower, upper = points.min(axis=0), points.max(axis=0)
    margin = padding * (upper - lower)
    return lower - margin, upper + margin


def make_color_model(color_mode, box=None, seed=0, **neural_options):
    """Color model for a ColorMode; neural mode needs the encoder bounding box"""
    if color_mode.kind == "sh":
        return ShColorModel(color_mode.sh_degree)
    if box is None:
        raise ModeMismatchError("The neural color model needs an encoder bounding box")
    return NeuralColorModel.create(box, seed=seed, **neural_options)
