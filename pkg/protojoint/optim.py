"""Gradient clipping and the SGD and AdamW parameter updates."""

from __future__ import annotations

import abc
import logging
from collections.abc import Mapping

import numpy as np

from protojoint.config import TrainConfig
from protojoint.exceptions import ConfigError
from protojoint.types import Matrix

log = logging.getLogger(__name__)


def global_norm(grads: Mapping[str, Matrix]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: Mapping[str, Matrix], max_norm: float) -> dict[str, Matrix]:
    """Rescale all gradients together so their global norm is at most ``max_norm``.

    A non-positive ``max_norm`` disables clipping.
    """
    if max_norm <= 0:
        return dict(grads)

    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)

    factor = max_norm / norm
    log.debug("Clipping gradient norm %.4f to %.4f", norm, max_norm)
    return {name: g * factor for name, g in grads.items()}


class BaseOptimizer(abc.ABC):
    """Updates named parameter arrays in place.

    Parameters whose gradient is entirely zero are left untouched, including
    weight decay and moment estimates, so a step only changes parameters the
    loss actually reached.

    Args:
        learning_rate: Step size, non-negative.
        weight_decay: Decoupled decay coefficient.
        grad_clip: Global gradient norm cap; non-positive disables it.
    """

    def __init__(self, learning_rate: float, weight_decay: float = 0.0, grad_clip: float = 0.0):
        if learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip

    def step(self, params: Mapping[str, Matrix], grads: Mapping[str, Matrix]) -> list[str]:
        """Apply one update; returns the names of the parameters that moved."""
        active = {name: g for name, g in grads.items() if name in params and np.any(g)}
        active = clip_gradients(active, self.grad_clip)

        for name, grad in sorted(active.items()):
            self.update(name, params[name], grad)

        return sorted(active)

    @abc.abstractmethod
    def update(self, name: str, param: Matrix, grad: Matrix) -> None:
        raise NotImplementedError


class SGD(BaseOptimizer):
    """Plain stochastic gradient descent with decoupled weight decay."""

    def update(self, name: str, param: Matrix, grad: Matrix) -> None:
        if self.weight_decay:
            param -= self.learning_rate * self.weight_decay * param
        param -= self.learning_rate * grad


class AdamW(BaseOptimizer):
    """Adam with bias-corrected moments and decoupled weight decay.

    Step counts are kept per parameter: a label embedding first seen late in
    training gets its own bias correction.
    """

    def __init__(
        self,
        learning_rate: float,
        weight_decay: float = 0.01,
        grad_clip: float = 0.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        super().__init__(learning_rate, weight_decay, grad_clip)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.first: dict[str, Matrix] = {}
        self.second: dict[str, Matrix] = {}
        self.steps: dict[str, int] = {}

    def update(self, name: str, param: Matrix, grad: Matrix) -> None:
        m = self.first.setdefault(name, np.zeros_like(param))
        v = self.second.setdefault(name, np.zeros_like(param))
        t = self.steps[name] = self.steps.get(name, 0) + 1

        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * grad * grad

        m_hat = m / (1.0 - self.beta1**t)
        v_hat = v / (1.0 - self.beta2**t)

        if self.weight_decay:
            param -= self.learning_rate * self.weight_decay * param
        param -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def build_optimizer(config: TrainConfig) -> BaseOptimizer:
    if config.optimizer == "sgd":
        return SGD(config.learning_rate, config.weight_decay, config.grad_clip)
    if config.optimizer == "adamw":
        return AdamW(
            config.learning_rate,
            config.weight_decay,
            config.grad_clip,
            config.beta1,
            config.beta2,
            config.eps,
        )
    raise ConfigError(f"unknown optimizer {config.optimizer!r}")
