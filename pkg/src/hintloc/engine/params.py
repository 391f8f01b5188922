"""Trainable parameter containers.

Weights use the uniform fan-in initialization U[-1/sqrt(fan_in), 1/sqrt(fan_in)].
Every container exposes named_tensors(prefix) so the optimizer and the
checkpoint code can traverse a model without knowing its structure.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from ..errors import ShapeError
from . import ops
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    if fan_in <= 0:
        raise ShapeError(f"fan_in must be positive, got {fan_in}")
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


NamedTensors = Iterator[tuple[str, Tensor]]


class Linear:
    """y = x @ W + b with W of shape (fan_in, fan_out)."""

    def __init__(self, rng, fan_in: int, fan_out: int, bias: bool = True):
        self.weight = uniform_init(rng, fan_in, (fan_in, fan_out))
        self.bias = uniform_init(rng, fan_in, (fan_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.weight)
        return y if self.bias is None else ops.add_bias(y, self.bias)

    def named_tensors(self, prefix: str = "") -> NamedTensors:
        yield prefix + "weight", self.weight
        if self.bias is not None:
            yield prefix + "bias", self.bias


class Mlp:
    """Chain of Linear layers with ReLU after each one except, optionally, the last."""

    def __init__(self, rng, widths: list[int], relu_last: bool = False):
        if len(widths) < 2:
            raise ShapeError(f"an MLP needs at least two widths, got {widths}")
        self.layers = [Linear(rng, widths[i], widths[i + 1])
                       for i in range(len(widths) - 1)]
        self.relu_last = relu_last

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.relu_last:
                x = ops.relu(x)
        return x

    def named_tensors(self, prefix: str = "") -> NamedTensors:
        for i, layer in enumerate(self.layers):
            yield from layer.named_tensors(f"{prefix}layer{i}.")


def count_parameters(named: NamedTensors) -> int:
    return sum(t.size for _, t in named)
