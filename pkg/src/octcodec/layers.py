"""GDN/IGDN and the generalized octave convolution pair.

An octave feature map is a :class:`DualRes`: a high-resolution tensor plus a
low-resolution tensor at exactly half the spatial size. ``GoConv`` mixes the
two with four convolutions (high->high, low->low, high->low, low->high) and
applies the branch activation after the merge.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .nn import Module, _uniform_init, conv_weight, param
from .tensor import Tensor

GDN_BETA_MIN = 1e-6
LEAKY_SLOPE = 0.2


@dataclass
class DualRes:
    high: Tensor
    low: Tensor | None

    def __post_init__(self):
        if self.low is not None:
            check_half_resolution(self.high.shape, self.low.shape)

    def map(self, fn: Callable[[Tensor], Tensor]) -> "DualRes":
        return DualRes(fn(self.high), None if self.low is None else fn(self.low))

    def numpy(self) -> tuple[np.ndarray, np.ndarray | None]:
        return self.high.data, None if self.low is None else self.low.data


def check_half_resolution(high_shape, low_shape) -> None:
    if high_shape[0] != low_shape[0]:
        raise ValueError(f"batch mismatch between high {high_shape} and low {low_shape}")
    for hi, lo in zip(high_shape[2:], low_shape[2:]):
        if hi % 2 or lo * 2 != hi:
            raise ValueError(f"low-resolution dims {low_shape[2:]} must be exactly half of {high_shape[2:]}")


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    return T.leaky_relu(x, slope)


class GDN(Module):
    """Generalized divisive normalization, or its inverse with ``inverse=True``.

    Parameters are used directly and reprojected onto beta >= 1e-6,
    gamma >= 0 by :meth:`project` after each optimizer step.
    """

    def __init__(self, channels: int, inverse: bool = False, gamma_init: float = 0.1):
        self.inverse = inverse
        self.beta = param(np.ones((1, channels, 1, 1)))
        self.gamma = param((gamma_init * np.eye(channels)).reshape(channels, channels, 1, 1))

    @property
    def channels(self) -> int:
        return self.beta.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"GDN built for {self.channels} channels, got {x.shape[1]}")
        return gdn(x, self.beta, self.gamma, inverse=self.inverse)

    def project(self) -> None:
        self.beta.data = np.maximum(self.beta.data, GDN_BETA_MIN)
        self.gamma.data = np.maximum(self.gamma.data, 0.0)


def gdn(x: Tensor, beta: Tensor, gamma: Tensor, inverse: bool = False) -> Tensor:
    """y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2) (times, for the inverse)."""
    c = x.shape[1]
    beta = T.as_tensor(beta)
    gamma = T.as_tensor(gamma)
    if beta.data.size != c or gamma.data.size != c * c:
        raise ValueError(f"GDN parameters do not match {c} channels")
    gamma4 = T.reshape(gamma, (c, c, 1, 1))
    norm = T.sqrt(T.conv2d(T.mul(x, x), gamma4, T.reshape(beta, (1, c, 1, 1))))
    return T.mul(x, norm) if inverse else T.div(x, norm)


def igdn(x: Tensor, beta: Tensor, gamma: Tensor) -> Tensor:
    return gdn(x, beta, gamma, inverse=True)


def _make_act(kind: str | None, channels: int):
    if kind is None or kind == "identity" or channels == 0:
        return None
    if kind == "gdn":
        return GDN(channels)
    if kind == "igdn":
        return GDN(channels, inverse=True)
    if kind == "leaky":
        return "leaky"
    raise ValueError(f"unknown activation {kind!r}")


def _apply_act(act, x: Tensor) -> Tensor:
    if act is None:
        return x
    if act == "leaky":
        return leaky_relu(x)
    return act(x)


def split_channels(c_out: int, alpha: float = 0.5) -> tuple[int, int]:
    """(high, low) channel counts with ceil(alpha * c_out) low channels."""
    low = int(np.ceil(alpha * c_out))
    return c_out - low, low


class GoConv(Module):
    """Generalized octave convolution with intra-path stride 1 or 2.

    Paths (k x k kernels, pad (k-1)/2):

    * high->high: conv, stride ``s``
    * low->low:   conv, stride ``s``
    * high->low:  conv, stride ``2s`` (down-sampling resampler)
    * low->high:  transposed conv stride 2 when ``s == 1``; conv stride 1 when ``s == 2``

    ``in_low == 0`` builds the entry layer that receives a single-resolution
    image; the low branch is then produced by the high->low path alone.
    """

    def __init__(
        self,
        in_high: int,
        in_low: int,
        out_high: int,
        out_low: int,
        stride: int = 1,
        kernel: int = 3,
        act: str | None = None,
        *,
        rng: np.random.Generator,
    ):
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        self.stride = stride
        self.padding = (kernel - 1) // 2
        self.in_low = in_low
        self.w_hh = conv_weight(rng, out_high, in_high, kernel)
        self.w_hl = conv_weight(rng, out_low, in_high, kernel)
        if in_low:
            self.w_ll = conv_weight(rng, out_low, in_low, kernel)
            if stride == 1:
                self.w_lh = param(_uniform_init(rng, (in_low, out_high, kernel, kernel), in_low * kernel * kernel))
            else:
                self.w_lh = conv_weight(rng, out_high, in_low, kernel)
        self.b_high = param(np.zeros((1, out_high, 1, 1)))
        self.b_low = param(np.zeros((1, out_low, 1, 1)))
        self.act_high = _make_act(act, out_high)
        self.act_low = _make_act(act, out_low)

    def linear(self, x: DualRes) -> DualRes:
        """The pre-activation merge of both branches."""
        s, p = self.stride, self.padding
        hi = x.high
        for n in hi.shape[2:]:
            if n % (2 * s):
                raise ValueError(f"spatial size {hi.shape[2:]} not divisible by {2 * s}")
        if bool(self.in_low) != (x.low is not None):
            raise ValueError("low-resolution input presence does not match layer configuration")
        out_h = T.conv2d(hi, self.w_hh, self.b_high, s, p)
        out_l = T.conv2d(hi, self.w_hl, self.b_low, 2 * s, p)
        if x.low is not None:
            lo = x.low
            out_l = T.add(out_l, T.conv2d(lo, self.w_ll, None, s, p))
            if s == 1:
                cross = T.conv2d_transpose(lo, self.w_lh, None, 2, p, 1)
            else:
                cross = T.conv2d(lo, self.w_lh, None, 1, p)
            out_h = T.add(out_h, cross)
        return DualRes(out_h, out_l)

    def __call__(self, x: DualRes) -> DualRes:
        y = self.linear(x)
        return DualRes(_apply_act(self.act_high, y.high), _apply_act(self.act_low, y.low))


class GoTConv(Module):
    """Generalized octave transposed convolution; every output dim is ``s`` x the input.

    Paths:

    * high->high: transposed conv, stride ``s``
    * low->low:   transposed conv, stride ``s``
    * low->high:  transposed conv, stride ``2s``
    * high->low:  conv stride 2 when ``s == 1``; transposed conv stride 1 when ``s == 2``

    With ``out_low == 0`` only the high branch is produced (image output layer).
    Given GoConv weights (hh, ll, hl, lh), the GoTConv with weights
    (hh, ll, hl=lh, lh=hl) and no biases is its exact linear adjoint.
    """

    def __init__(
        self,
        in_high: int,
        in_low: int,
        out_high: int,
        out_low: int,
        stride: int = 1,
        kernel: int = 3,
        act: str | None = None,
        *,
        rng: np.random.Generator,
    ):
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        self.stride = stride
        self.padding = (kernel - 1) // 2
        self.out_low = out_low
        fan = kernel * kernel
        self.w_hh = param(_uniform_init(rng, (in_high, out_high, kernel, kernel), in_high * fan))
        self.w_lh = param(_uniform_init(rng, (in_low, out_high, kernel, kernel), in_low * fan))
        if out_low:
            self.w_ll = param(_uniform_init(rng, (in_low, out_low, kernel, kernel), in_low * fan))
            if stride == 1:
                self.w_hl = conv_weight(rng, out_low, in_high, kernel)
            else:
                self.w_hl = param(_uniform_init(rng, (in_high, out_low, kernel, kernel), in_high * fan))
            self.b_low = param(np.zeros((1, out_low, 1, 1)))
        self.b_high = param(np.zeros((1, out_high, 1, 1)))
        self.act_high = _make_act(act, out_high)
        self.act_low = _make_act(act, out_low)

    def linear(self, x: DualRes) -> DualRes:
        s, p = self.stride, self.padding
        if x.low is None:
            raise ValueError("GoTConv needs both resolutions")
        hi, lo = x.high, x.low
        out_h = T.add(
            T.conv2d_transpose(hi, self.w_hh, self.b_high, s, p, s - 1),
            T.conv2d_transpose(lo, self.w_lh, None, 2 * s, p, 2 * s - 1),
        )
        out_l = None
        if self.out_low:
            if s == 1:
                cross = T.conv2d(hi, self.w_hl, None, 2, p)
            else:
                cross = T.conv2d_transpose(hi, self.w_hl, None, 1, p, 0)
            out_l = T.add(T.conv2d_transpose(lo, self.w_ll, self.b_low, s, p, s - 1), cross)
        return DualRes(out_h, out_l)

    def __call__(self, x: DualRes) -> DualRes:
        y = self.linear(x)
        low = None if y.low is None else _apply_act(self.act_low, y.low)
        return DualRes(_apply_act(self.act_high, y.high), low)


def goconv(x: DualRes, layer: GoConv) -> DualRes:
    return layer(x)


def gotconv(x: DualRes, layer: GoTConv) -> DualRes:
    return layer(x)


def gdn_layers(module: Module) -> list[GDN]:
    return [m for m in module.modules() if isinstance(m, GDN)]
