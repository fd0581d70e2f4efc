"""Dense float64 tensors with a reverse-mode tape.

Only the operations the codec network needs are provided. Every op builds a
node holding a closure that maps the output gradient to parent gradients;
``Tensor.backward`` walks the graph in reverse topological order and
accumulates gradients additively.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph construction in the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """A float64 array that optionally records the ops applied to it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- autodiff ---------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Propagate d(self)/d(leaf) into ``.grad`` of every tracked node."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward() without an explicit gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise RuntimeError("tensor does not require grad")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    out = Tensor(data)
    parents = tuple(parents)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        ),
    )


def power(a: Tensor, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _make(
        a.data**exponent,
        (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1),),
    )


def square(a: Tensor) -> Tensor:
    return mul(a, a)


def sqrt(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def log2(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _make(np.log2(a.data), (a,), lambda g: (g / (a.data * math.log(2.0)),))


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = special.expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _make(np.logaddexp(0.0, a.data), (a,), lambda g: (g * special.expit(a.data),))


def normal_cdf(a: Tensor) -> Tensor:
    """Standard normal CDF, 0.5 * erfc(-x / sqrt(2))."""
    a = as_tensor(a)
    out = 0.5 * special.erfc(-a.data / math.sqrt(2.0))
    pdf = np.exp(-0.5 * a.data * a.data) / math.sqrt(2.0 * math.pi)
    return _make(out, (a,), lambda g: (g * pdf,))


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip values; gradient is zero where the bound is active."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    mask = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        mask &= a.data >= lo
    if hi is not None:
        mask &= a.data <= hi
    return _make(out, (a,), lambda g: (g * mask,))


def lower_bound(a: Tensor, bound: float) -> Tensor:
    """max(a, bound), letting gradients through when they push upward.

    Plain clipping stalls values stuck under the bound; this passes the
    gradient whenever the value is above the bound or the step would raise it.
    """
    a = as_tensor(a)
    out = np.maximum(a.data, bound)

    def backward(g):
        mask = (a.data >= bound) | (g < 0)
        return (g * mask,)

    return _make(out, (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _make(
        np.where(pos, a.data, slope * a.data),
        (a,),
        lambda g: (np.where(pos, g, slope * g),),
    )


def abs_(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


# -- reductions and shape ops -----------------------------------------------
def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def channel_slice(a: Tensor, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _make(a.data[:, start:stop].copy(), (a,), backward)


def crop(a: Tensor, height: int, width: int) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        full[..., :height, :width] = g
        return (full,)

    return _make(a.data[..., :height, :width].copy(), (a,), backward)


# -- convolution -------------------------------------------------------------
def _check_conv_args(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> None:
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv expects 4-D input and kernel, got {x.shape} and {w.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    # (N, C, Ho, Wo, kh, kw) strided view
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _conv_fwd(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {h}x{wd}")
    win = _windows(_pad(x, padding), kh, kw, stride, ho, wo)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    out = cols @ w.reshape(co, -1).T
    return out.reshape(n, ho, wo, co).transpose(0, 3, 1, 2).copy()


def _conv_input_grad(
    g: np.ndarray, w: np.ndarray, stride: int, padding: int, in_hw: tuple[int, int]
) -> np.ndarray:
    """Adjoint of ``_conv_fwd`` with respect to its input (col2im)."""
    n, co, ho, wo = g.shape
    _, ci, kh, kw = w.shape
    h, wd = in_hw
    hp, wp = h + 2 * padding, wd + 2 * padding
    # rows of the padded input actually touched can exceed hp when h is cropped
    full_h = max(hp, (ho - 1) * stride + kh)
    full_w = max(wp, (wo - 1) * stride + kw)
    out = np.zeros((n, ci, full_h, full_w))
    cols = np.einsum("nohw,ocij->ncijhw", g, w, optimize=True)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride] += cols[
                :, :, i, j
            ]
    return out[:, :, padding : padding + h, padding : padding + wd].copy()


def _conv_kernel_grad(
    x: np.ndarray, g: np.ndarray, stride: int, padding: int, kshape: tuple[int, ...]
) -> np.ndarray:
    n, c, h, wd = x.shape
    _, co, ho, wo = g.shape
    kh, kw = kshape[2], kshape[3]
    win = _windows(_pad(x, padding), kh, kw, stride, ho, wo)
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))


def _bias_data(bias, channels: int) -> np.ndarray | None:
    if bias is None:
        return None
    b = bias.data if isinstance(bias, Tensor) else np.asarray(bias, dtype=np.float64)
    if b.size != channels:
        raise ValueError(f"bias has {b.size} entries, expected {channels}")
    return b.reshape(1, channels, 1, 1)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (N,C,H,W) with ``weight`` (C_out,C_in,kH,kW)."""
    x, weight = as_tensor(x), as_tensor(weight)
    _check_conv_args(x.data, weight.data, stride, padding)
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"input has {x.shape[1]} channels, kernel expects {weight.shape[1]}")
    out = _conv_fwd(x.data, weight.data, stride, padding)
    b = _bias_data(bias, weight.shape[0])
    if b is not None:
        out += b
    hw = x.shape[2:]

    def backward(g):
        gx = _conv_input_grad(g, weight.data, stride, padding, hw) if x.requires_grad else None
        gw = _conv_kernel_grad(x.data, g, stride, padding, weight.shape) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3)).reshape(bias.shape)

    parents = (x, weight) if bias is None else (x, weight, as_tensor(bias))
    return _make(out, parents, backward)


def conv2d_transpose(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Transposed convolution; the exact adjoint of :func:`conv2d` with the same kernel.

    ``weight`` has shape (C_in, C_out, kH, kW), i.e. the shape of the kernel of
    the forward convolution this op transposes. Output size per axis is
    ``(H - 1) * stride - 2 * padding + k + output_padding``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _check_conv_args(x.data, weight.data, stride, padding)
    if not 0 <= output_padding < stride:
        raise ValueError(f"output_padding must be < stride, got {output_padding}")
    if x.shape[1] != weight.shape[0]:
        raise ValueError(f"input has {x.shape[1]} channels, kernel expects {weight.shape[0]}")
    kh, kw = weight.shape[2:]
    ho = (x.shape[2] - 1) * stride - 2 * padding + kh + output_padding
    wo = (x.shape[3] - 1) * stride - 2 * padding + kw + output_padding
    if ho < 1 or wo < 1:
        raise ValueError("transposed convolution output would be empty")
    out = _conv_input_grad(x.data, weight.data, stride, padding, (ho, wo))
    b = _bias_data(bias, weight.shape[1])
    if b is not None:
        out += b

    def backward(g):
        gx = _conv_fwd(g, weight.data, stride, padding) if x.requires_grad else None
        gw = _conv_kernel_grad(g, x.data, stride, padding, weight.shape) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3)).reshape(bias.shape)

    parents = (x, weight) if bias is None else (x, weight, as_tensor(bias))
    return _make(out, parents, backward)


# -- tracked randomness helpers ----------------------------------------------
def add_uniform_noise(x: Tensor, rng: np.random.Generator) -> Tensor:
    """x + U(-0.5, 0.5); the noise is a constant for differentiation."""
    return add(x, Tensor(rng.uniform(-0.5, 0.5, size=x.shape)))


def round_half_away(a: np.ndarray) -> np.ndarray:
    # adding 0.0 turns -0.0 into 0.0 so equal latents are also byte-identical
    return np.sign(a) * np.floor(np.abs(a) + 0.5) + 0.0


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product following ``np.matmul`` broadcasting."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes).copy(), (a,), lambda g: (g.transpose(inverse),))
