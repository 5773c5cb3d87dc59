"""Adam over named parameter arrays, updated in place, with row-lazy updates for sparse hash-table gradients."""

import logging

import numpy as np

from depth_splat.color.hash_grid import SparseTableGrad
from depth_splat.constants import ADAM_BETAS, ADAM_EPS
from depth_splat.errors import DimensionMismatchError, ValidationError

logger = logging.getLogger(__name__)


def exponential_lr(step, lr_init, lr_final, max_steps):
    """Log-linear interpolation from lr_init at step 0 to lr_final at max_steps, held at lr_final afterwards"""
    if max_steps <= 0:
        return lr_init
    t = np.clip(step / max_steps, 0, 1)
    return float(np.exp(np.log(lr_init) * (1 - t) + np.log(lr_final) * t))


class Adam:
    """Adam with one learning rate per named parameter.

    Moments are created lazily, shaped like the parameter. Dense gradients update every entry; a SparseTableGrad
    updates only its rows (of the parameter viewed as (rows, features)), leaving the moments of untouched rows as they
    were. The bias correction uses a per-parameter step count.
    """

    def __init__(self, learning_rates, betas=ADAM_BETAS, eps=ADAM_EPS):
        self.learning_rates = dict(learning_rates)
        self.betas = tuple(betas)
        self.eps = eps
        self.first = {}
        self.second = {}
        self.steps = {}

    def set_learning_rate(self, name, lr):
        if not lr > 0:
            raise ValidationError(f"Learning rate for {name} must be > 0, got {lr}")
        self.learning_rates[name] = lr

    def _moments(self, name, param):
        if name not in self.first:
            self.first[name] = np.zeros_like(param)
            self.second[name] = np.zeros_like(param)
            self.steps[name] = 0
        elif self.first[name].shape != param.shape:
            raise DimensionMismatchError(
                f"Moments of {name} have shape {self.first[name].shape}, parameter has {param.shape}"
            )
        return self.first[name], self.second[name]

    def step(self, params, grads):
        """Apply one update to every parameter that has a gradient.

        Args:
            params: name -> array, modified in place
            grads: name -> dense array shaped like the parameter, or SparseTableGrad
        """
        beta1, beta2 = self.betas
        for name, grad in grads.items():
            if name not in self.learning_rates:
                raise ValidationError(f'No learning rate for parameter "{name}"')
            param = params[name]
            first, second = self._moments(name, param)
            self.steps[name] += 1
            step = self.steps[name]
            lr = self.learning_rates[name] * np.sqrt(1 - beta2**step) / (1 - beta1**step)

            if isinstance(grad, SparseTableGrad):
                width = grad.values.shape[-1]
                rows = grad.rows
                flat_param, flat_first, flat_second = (a.reshape(-1, width) for a in (param, first, second))
                flat_first[rows] = beta1 * flat_first[rows] + (1 - beta1) * grad.values
                flat_second[rows] = beta2 * flat_second[rows] + (1 - beta2) * grad.values**2
                flat_param[rows] -= lr * flat_first[rows] / (np.sqrt(flat_second[rows]) + self.eps)
                continue

            grad = np.asarray(grad, dtype=float)
            if grad.shape != param.shape:
                raise DimensionMismatchError(f"Gradient of {name} has shape {grad.shape}, parameter has {param.shape}")
            first *= beta1
            first += (1 - beta1) * grad
            second *= beta2
            second += (1 - beta2) * grad**2
            param -= lr * first / (np.sqrt(second) + self.eps)

    def remap_rows(self, names, sources, fresh):
        """Follow a densify / prune of per-primitive parameters.

        Args:
            names: parameters whose first axis is the primitive index
            sources: (M,) old row of every new row
            fresh: (M,) True for rows that are new primitives; their moments start at zero
        """
        for name in names:
            if name not in self.first:
                continue
            for moments in (self.first, self.second):
                remapped = moments[name][sources]
                remapped[fresh] = 0
                moments[name] = remapped

    def state_dict(self):
        """Flat name -> array mapping, suitable for np.savez"""
        state = {"adam.betas": np.array(self.betas), "adam.eps": np.array(self.eps)}
        for name in self.first:
            state[f"adam.first.{name}"] = self.first[name]
            state[f"adam.second.{name}"] = self.second[name]
            state[f"adam.steps.{name}"] = np.array(self.steps[name])
        for name, lr in self.learning_rates.items():
            state[f"adam.lr.{name}"] = np.array(lr)
        return state

    @classmethod
    def from_state_dict(cls, state):
        optimizer = cls(
            {key[len("adam.lr.") :]: float(value) for key, value in state.items() if key.startswith("adam.lr.")},
            betas=tuple(state["adam.betas"]),
            eps=float(state["adam.eps"]),
        )
        for key, value in state.items():
            if key.startswith("adam.first."):
                name = key[len("adam.first.") :]
                optimizer.first[name] = np.array(value, dtype=float)
                optimizer.second[name] = np.array(state[f"adam.second.{name}"], dtype=float)
                optimizer.steps[name] = int(state[f"adam.steps.{name}"])
        return optimizer
