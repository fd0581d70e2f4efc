"""Probability models over integer latents and their coding tables.

Two models are used:

* a discretized Gaussian, P(k) = Phi((k + 1/2 - mu) / sigma) - Phi((k - 1/2 - mu) / sigma),
  for every stream with predicted parameters;
* a learned per-channel factorized model (a monotone cumulative built from
  four affine units with non-negative slopes and tanh gates) for the
  innermost latent, which has no prior.

Both are floored at 2**-16 so that every symbol stays codable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import tensor as T
from .nn import Module, param
from .tensor import Tensor

PRECISION_BITS = 16
TOTAL = 1 << PRECISION_BITS
PROB_FLOOR = 2.0**-PRECISION_BITS
SIGMA_MIN = 1e-9


@dataclass
class GaussianParams:
    mu: Tensor
    sigma: Tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mu.shape


# -- discretized Gaussian -----------------------------------------------------
def gaussian_pmf(k, mu, sigma, floor: bool = True) -> np.ndarray:
    """Probability of integer ``k`` under N(mu, sigma^2) integrated over [k-1/2, k+1/2]."""
    k = np.asarray(k, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.maximum(np.asarray(sigma, dtype=np.float64), SIGMA_MIN)
    # evaluate on the lower tail so that differences of CDFs keep precision
    d = np.abs(k - mu)
    p = special.ndtr((0.5 - d) / sigma) - special.ndtr((-0.5 - d) / sigma)
    return np.maximum(p, PROB_FLOOR) if floor else p


def gaussian_likelihood(x: Tensor, params: GaussianParams) -> Tensor:
    """Differentiable discretized-Gaussian likelihood of ``x`` (real or integer valued)."""
    sigma = T.clamp(params.sigma, SIGMA_MIN, None)
    d = T.abs_(T.sub(x, params.mu))
    upper = T.normal_cdf(T.div(T.sub(0.5, d), sigma))
    lower = T.normal_cdf(T.div(T.sub(-0.5, d), sigma))
    return T.lower_bound(T.sub(upper, lower), PROB_FLOOR)


# -- factorized model ---------------------------------------------------------
class FactorizedModel(Module):
    """Per-channel learned cumulative c(x) = sigmoid(g(x)), g monotone increasing."""

    def __init__(self, channels: int, filters=(3, 3, 3), init_scale: float = 4.0):
        self.channels = channels
        dims = (1,) + tuple(filters) + (1,)
        scale = init_scale ** (1.0 / (len(dims) - 1))
        rng = np.random.default_rng(0)
        self.num_units = len(dims) - 1
        for i in range(self.num_units):
            init = math.log(math.expm1(1.0 / scale / dims[i + 1]))
            setattr(self, f"matrix{i}", param(np.full((channels, dims[i + 1], dims[i]), init)))
            setattr(self, f"bias{i}", param(rng.uniform(-0.5, 0.5, size=(channels, dims[i + 1], 1))))
            if i < self.num_units - 1:
                setattr(self, f"factor{i}", param(np.zeros((channels, dims[i + 1], 1))))

    def _tensors(self):
        n = self.num_units
        mats = [getattr(self, f"matrix{i}") for i in range(n)]
        biases = [getattr(self, f"bias{i}") for i in range(n)]
        factors = [getattr(self, f"factor{i}") for i in range(n - 1)]
        return mats, biases, factors

    def logits(self, x: Tensor) -> Tensor:
        """g(x) for ``x`` of shape (C, 1, M); returns (C, 1, M)."""
        mats, biases, factors = self._tensors()
        h = x
        for i, (m, b) in enumerate(zip(mats, biases)):
            h = T.add(T.matmul(T.softplus(m), h), b)
            if i < len(factors):
                h = T.add(h, T.mul(T.tanh(factors[i]), T.tanh(h)))
        return h

    def cdf(self, values: np.ndarray) -> np.ndarray:
        """Cumulative at ``values`` (shape (M,)) for every channel; returns (C, M)."""
        with T.no_grad():
            x = Tensor(np.broadcast_to(np.asarray(values, dtype=np.float64), (self.channels, 1, len(values))))
            return special.expit(self.logits(x).data[:, 0, :])

    def likelihood(self, x: Tensor) -> Tensor:
        """Per-element probability of ``x`` (N, C, H, W) integrated over unit bins."""
        n, c, h, w = x.shape
        if c != self.channels:
            raise ValueError(f"factorized model has {self.channels} channels, got {c}")
        flat = T.reshape(_to_channel_major(x), (c, 1, n * h * w))
        lo = self.logits(T.sub(flat, 0.5))
        up = self.logits(T.add(flat, 0.5))
        # flip to the side where both sigmoids are small for numerical accuracy
        sign = -np.sign(lo.data + up.data)
        sign[sign == 0] = 1.0
        p = T.abs_(T.sub(T.sigmoid(T.mul(up, sign)), T.sigmoid(T.mul(lo, sign))))
        p = T.lower_bound(p, PROB_FLOOR)
        return _from_channel_major(T.reshape(p, (c, n, h, w)))

    def pmf_table(self, v_min: int, v_max: int) -> np.ndarray:
        """Floored probabilities of each integer in [v_min, v_max] per channel, (C, K)."""
        k = np.arange(v_min, v_max + 1, dtype=np.float64)
        edges = np.concatenate([k - 0.5, [v_max + 0.5]])
        c = self.cdf(edges)
        return np.maximum(np.diff(c, axis=1), PROB_FLOOR)


def _to_channel_major(x: Tensor) -> Tensor:
    return T.transpose(x, (1, 0, 2, 3))


def _from_channel_major(x: Tensor) -> Tensor:
    return T.transpose(x, (1, 0, 2, 3))


def factorized_pmf(k, model: FactorizedModel, channel: int, floor: bool = True) -> np.ndarray:
    k = np.atleast_1d(np.asarray(k, dtype=np.float64))
    c = model.cdf(np.concatenate([k - 0.5, k + 0.5]))[channel]
    p = c[len(k) :] - c[: len(k)]
    return np.maximum(p, PROB_FLOOR) if floor else p


# -- rate -----------------------------------------------------------------------
def estimate_rate(likelihood: Tensor) -> Tensor:
    """Self-information in bits, -sum(log2 P)."""
    return T.mul(T.tsum(T.log(likelihood)), -1.0 / math.log(2.0))


# -- coding tables --------------------------------------------------------------
@dataclass
class QuantizedCdf:
    """Integer cumulative tables, one row per distribution.

    ``cdf[i]`` has K+1 strictly increasing entries from 0 to 2**16 for the
    symbols ``v_min .. v_min + K - 1``.
    """

    cdf: np.ndarray
    v_min: int

    @property
    def num_symbols(self) -> int:
        return self.cdf.shape[1] - 1

    @property
    def v_max(self) -> int:
        return self.v_min + self.num_symbols - 1

    def counts(self) -> np.ndarray:
        return np.diff(self.cdf, axis=1)


def quantize_pmf(pmf: np.ndarray) -> np.ndarray:
    """Integer counts summing to 2**16 with every count >= 1.

    Largest-remainder rounding of ``pmf * 2**16`` (ties to the lower index),
    after which zero counts are raised to 1 and the deficit is taken from the
    largest count. Works row-wise on 2-D input.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    single = pmf.ndim == 1
    p = np.atleast_2d(pmf)
    n, k = p.shape
    if k > TOTAL:
        raise ValueError(f"alphabet of {k} symbols exceeds coder precision")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("pmf entries must be finite and non-negative")
    s = p.sum(axis=1, keepdims=True)
    if np.any(s <= 0):
        raise ValueError("pmf has no mass")
    raw = p / s * TOTAL
    counts = np.floor(raw).astype(np.int64)
    short = TOTAL - counts.sum(axis=1)
    frac = raw - counts
    order = np.argsort(-frac, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(n)[:, None]
    ranks[rows, order] = np.arange(k)[None, :]
    counts += (ranks < short[:, None]).astype(np.int64)
    zero = counts == 0
    deficit = zero.sum(axis=1)
    counts[zero] = 1
    top = np.argmax(counts, axis=1)
    counts[np.arange(n), top] -= deficit
    return counts[0] if single else counts


def build_quantized_cdf(pmf: np.ndarray, v_min: int = 0) -> QuantizedCdf:
    counts = np.atleast_2d(quantize_pmf(pmf))
    cdf = np.zeros((counts.shape[0], counts.shape[1] + 1), dtype=np.int64)
    np.cumsum(counts, axis=1, out=cdf[:, 1:])
    return QuantizedCdf(cdf=cdf, v_min=int(v_min))


def gaussian_tables(mu: np.ndarray, sigma: np.ndarray, v_min: int, v_max: int) -> QuantizedCdf:
    """One table per element of ``mu``/``sigma`` (flattened, C order)."""
    k = np.arange(v_min, v_max + 1, dtype=np.float64)[None, :]
    pmf = gaussian_pmf(k, mu.reshape(-1, 1), sigma.reshape(-1, 1))
    return build_quantized_cdf(pmf, v_min)
