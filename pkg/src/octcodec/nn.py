"""Minimal module system: parameter registration, naming and plain conv layers."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Container that discovers Tensor parameters and child modules by attribute."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            if missing:
                raise KeyError(f"missing parameters: {missing[:5]}")
        for name, arr in state.items():
            if name not in own:
                if strict:
                    raise KeyError(f"unexpected parameter {name}")
                continue
            p = own[name]
            if arr.size != p.data.size:
                raise ValueError(f"{name}: size {arr.size} != {p.data.size}")
            p.data = np.asarray(arr, dtype=np.float64).reshape(p.shape).copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def conv_weight(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> Tensor:
    return param(_uniform_init(rng, (c_out, c_in, k, k), c_in * k * k))


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int = 3, stride: int = 1, *, rng: np.random.Generator):
        self.stride = stride
        self.padding = (kernel - 1) // 2
        self.weight = conv_weight(rng, c_out, c_in, kernel)
        self.bias = param(np.zeros((1, c_out, 1, 1)))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    """Transposed conv sized so that the output is exactly ``stride`` times the input."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, stride: int = 2, *, rng: np.random.Generator):
        self.stride = stride
        self.padding = (kernel - 1) // 2
        self.output_padding = stride - 1
        self.weight = param(_uniform_init(rng, (c_in, c_out, kernel, kernel), c_in * kernel * kernel))
        self.bias = param(np.zeros((1, c_out, 1, 1)))

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d_transpose(x, self.weight, self.bias, self.stride, self.padding, self.output_padding)
