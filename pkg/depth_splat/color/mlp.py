"""The two-stage color MLP of the neural color renderer.

Stage A maps a position encoding to a feature that does not depend on the view, so it can be cached across cameras.
Stage B merges that feature with the view-direction encoding and produces rgb through a sigmoid.
"""

from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.special import expit

from depth_splat.constants import MLP_STAGE_A_LAYERS, MLP_STAGE_B_LAYERS, MLP_WIDTH
from depth_splat.errors import DimensionMismatchError

RGB_CHANNELS = 3


@dataclass
class DenseLayer:
    weight: np.ndarray  # (inputs, outputs)
    bias: np.ndarray  # (outputs,)


def _he_layer(rng, inputs, outputs):
    return DenseLayer(weight=rng.normal(0, np.sqrt(2 / inputs), size=(inputs, outputs)), bias=np.zeros(outputs))


@dataclass
class _StageActivations:
    inputs: List[np.ndarray]  # input to every layer
    pre_activations: List[np.ndarray]


def _forward(layers, x, last_activation):
    inputs, pre_activations = [], []
    for index, layer in enumerate(layers):
        inputs.append(x)
        z = x @ layer.weight + layer.bias
        pre_activations.append(z)
        is_last = index == len(layers) - 1
        x = last_activation(z) if is_last else np.maximum(z, 0)
    return x, _StageActivations(inputs, pre_activations)


def _backward(layers, activations, output_grads, last_activation_grad, prefix):
    grads = {}
    upstream = last_activation_grad(activations.pre_activations[-1], output_grads)
    for index in reversed(range(len(layers))):
        layer = layers[index]
        grads[f"{prefix}{index}.weight"] = activations.inputs[index].T @ upstream
        grads[f"{prefix}{index}.bias"] = upstream.sum(axis=0)
        upstream = upstream @ layer.weight.T
        if index > 0:
            upstream = upstream * (activations.pre_activations[index - 1] > 0)
    return grads, upstream


def _relu_grad(pre_activation, grads):
    return grads * (pre_activation > 0)


def _sigmoid_grad(pre_activation, grads):
    activated = expit(pre_activation)
    return grads * activated * (1 - activated)


class ColorMlp:
    """Stage A: `stage_a_layers` ReLU layers of `width` from the position encoding to the cached feature.
    Stage B: (feature + direction encoding) through `stage_b_layers - 1` ReLU layers, then a sigmoid rgb layer.
    """

    def __init__(
        self,
        encoding_dim,
        direction_dim,
        width=MLP_WIDTH,
        stage_a_layers=MLP_STAGE_A_LAYERS,
        stage_b_layers=MLP_STAGE_B_LAYERS,
        seed=0,
    ):
        rng = np.random.default_rng(seed)
        self.encoding_dim = encoding_dim
        self.direction_dim = direction_dim
        self.stage_a = [_he_layer(rng, encoding_dim if i == 0 else width, width) for i in range(stage_a_layers)]
        self.stage_b = [
            _he_layer(
                rng, width + direction_dim if i == 0 else width, RGB_CHANNELS if i == stage_b_layers - 1 else width
            )
            for i in range(stage_b_layers)
        ]

    @property
    def feature_dim(self):
        return self.stage_a[-1].weight.shape[1]

    def parameters(self):
        """name -> weight array (the arrays themselves, so optimizers can update them in place)"""
        named = {}
        for prefix, layers in (("mlp.a", self.stage_a), ("mlp.b", self.stage_b)):
            for index, layer in enumerate(layers):
                named[f"{prefix}{index}.weight"] = layer.weight
                named[f"{prefix}{index}.bias"] = layer.bias
        return named

    def features(self, encodings):
        return self.features_with_activations(encodings)[0]

    def features_with_activations(self, encodings):
        if encodings.shape[-1] != self.encoding_dim:
            raise DimensionMismatchError(f"Expected {self.encoding_dim}-dim encodings, got {encodings.shape[-1]}")
        return _forward(self.stage_a, encodings, lambda z: np.maximum(z, 0))

    def rgb(self, features, direction_encodings):
        return self.rgb_with_activations(features, direction_encodings)[0]

    def rgb_with_activations(self, features, direction_encodings):
        return _forward(self.stage_b, np.concatenate([features, direction_encodings], axis=-1), expit)

    def rgb_backward(self, activations, rgb_grads):
        """Returns (weight grads by name, feature grads, direction encoding grads)"""
        grads, input_grads = _backward(self.stage_b, activations, rgb_grads, _sigmoid_grad, "mlp.b")
        return grads, input_grads[:, : self.feature_dim], input_grads[:, self.feature_dim :]

    def features_backward(self, activations, feature_grads):
        """Returns (weight grads by name, encoding grads)"""
        return _backward(self.stage_a, activations, feature_grads, _relu_grad, "mlp.a")
