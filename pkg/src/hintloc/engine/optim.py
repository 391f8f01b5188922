"""Adam optimizer with bias correction, plus the step-decay schedule."""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import ConfigError, ShapeError
from .tensor import Tensor


class Adam:
    """Standard Adam. Moment buffers are keyed by parameter name, so the
    parameter set must use stable unique names across steps and checkpoints.
    """

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0 and eps > 0.0):
            raise ConfigError(f"bad Adam hyperparameters: {beta1}, {beta2}, {eps}")
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, named_params: list[tuple[str, Tensor]], lr: float) -> None:
        """Apply one update to every parameter that received a gradient,
        then clear all gradients."""
        if lr <= 0.0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.step_count += 1
        for name, p in named_params:
            if p.grad is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros(p.shape)
                self.v[name] = np.zeros(p.shape)
            elif self.m[name].shape != p.shape:
                raise ShapeError(
                    f"moment buffer for {name} has shape {self.m[name].shape}, "
                    f"parameter has {p.shape}")
            new = kernels.adam_update(p.data, p.grad, self.m[name], self.v[name],
                                      self.step_count, lr,
                                      self.beta1, self.beta2, self.eps)
            p._assign(new)
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out["adam.m." + name] = self.m[name]
            out["adam.v." + name] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        self.step_count = int(step_count)
        self.m.clear()
        self.v.clear()
        for key, arr in arrays.items():
            if key.startswith("adam.m."):
                self.m[key[len("adam.m."):]] = np.array(arr, dtype=np.float64)
            elif key.startswith("adam.v."):
                self.v[key[len("adam.v."):]] = np.array(arr, dtype=np.float64)


def step_decay_lr(base_lr: float, epoch: int, factor: float = 0.4, every: int = 7) -> float:
    """base_lr * factor ** floor(epoch / every), epochs counted from zero."""
    if base_lr <= 0 or not (0 < factor <= 1) or every < 1:
        raise ConfigError(f"bad schedule: base={base_lr}, factor={factor}, every={every}")
    if epoch < 0:
        raise ConfigError(f"epoch must be non-negative, got {epoch}")
    return base_lr * factor ** (epoch // every)
