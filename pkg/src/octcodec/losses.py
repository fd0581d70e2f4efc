"""Rate-distortion objective with the information-fidelity term."""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .entropy import estimate_rate
from .metrics import ms_ssim_tensor
from .model import HIGH_STREAMS, LOW_STREAMS, FidelityProbe
from .tensor import Tensor

PIXEL_SCALE = 127.5


@dataclass
class LossWeights:
    lam: float
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if min(self.lam, self.lambda1, self.lambda2) < 0:
            raise ValueError("loss weights must be non-negative")


def distortion(x: Tensor, x_hat: Tensor, metric: str = "mse") -> Tensor:
    """MSE on the 0-255 scale, or 1 - MS-SSIM, for images normalized to [-1, 1]."""
    if metric == "mse":
        d = T.mul(T.sub(x, x_hat), PIXEL_SCALE)
        return T.mean(T.mul(d, d))
    if metric == "ms-ssim":
        a = T.mul(T.add(x, 1.0), PIXEL_SCALE)
        b = T.mul(T.add(x_hat, 1.0), PIXEL_SCALE)
        return T.sub(1.0, ms_ssim_tensor(a, b, 255.0))
    raise ValueError(f"unknown metric {metric!r}")


def stream_bits(likelihoods: dict[str, Tensor]) -> dict[str, Tensor]:
    return {name: estimate_rate(p) for name, p in likelihoods.items()}


def rate_split(likelihoods: dict[str, Tensor], num_pixels: int) -> tuple[Tensor, Tensor]:
    """(R^H, R^L) in bits per pixel."""
    bits = stream_bits(likelihoods)
    zero = Tensor(0.0)
    high = sum((bits[s] for s in HIGH_STREAMS if s in bits), zero)
    low = sum((bits[s] for s in LOW_STREAMS if s in bits), zero)
    return T.mul(high, 1.0 / num_pixels), T.mul(low, 1.0 / num_pixels)


def loss_rd(rate_bpp, dist, lam: float) -> Tensor:
    """L = R + lambda * D."""
    return T.add(rate_bpp, T.mul(dist, lam))


def loss_if(y_low: Tensor, y1_low: Tensor, probe_y: FidelityProbe, probe_y1: FidelityProbe, w: LossWeights) -> Tensor:
    """lambda1 * ||F(y^L) - y^L||^2 + lambda2 * ||F(y1^L) - y1^L||^2, mean-reduced."""
    total = Tensor(0.0)
    if w.lambda1:
        r = T.sub(probe_y(y_low), y_low)
        total = T.add(total, T.mul(T.mean(T.mul(r, r)), w.lambda1))
    if w.lambda2:
        r = T.sub(probe_y1(y1_low), y1_low)
        total = T.add(total, T.mul(T.mean(T.mul(r, r)), w.lambda2))
    return total


def loss_total(rd: Tensor, lif: Tensor) -> Tensor:
    return T.add(rd, lif)
