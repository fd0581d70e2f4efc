"""Shared oracles and image corpora for the test suite."""

from __future__ import annotations

import numpy as np

from octcodec.tensor import Tensor


def training_images() -> list[np.ndarray]:
    from skimage import data

    return [data.astronaut(), data.coffee(), data.chelsea(), data.rocket(), data.immunohistochemistry()]


def heldout_images() -> list[np.ndarray]:
    """Five held-out RGB crops with sizes that need padding."""
    from skimage import data

    logo = data.logo()[..., :3]
    return [
        np.ascontiguousarray(data.hubble_deep_field()[300:396, 400:531]),
        np.ascontiguousarray(data.retina()[600:720, 500:601]),
        np.ascontiguousarray(data.colorwheel()[120:232, 100:228]),
        np.ascontiguousarray(data.stereo_motorcycle()[0][200:290, 300:420]),
        np.ascontiguousarray(logo[150:250, 100:180]),
    ]


def numeric_grad(f, arrays: list[np.ndarray], h: float = 1e-4) -> list[np.ndarray]:
    """Central differences of scalar ``f(*arrays)`` w.r.t. every array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = f(*arrays)
            a[i] = old - h
            down = f(*arrays)
            a[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute deviation divided by the largest numeric magnitude."""
    scale = max(float(np.abs(numeric).max()), 1e-12)
    return float(np.abs(analytic - numeric).max()) / scale


def gradcheck(op, arrays: list[np.ndarray], seed: int = 0, h: float = 1e-4) -> float:
    """Worst relative error of the tape gradient of ``sum(w * op(*inputs))``.

    ``w`` is a fixed random weighting so every output element contributes.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    rng = np.random.default_rng(seed)
    probe = op(*[Tensor(a) for a in arrays])
    w = rng.normal(size=probe.shape)

    def scalar(*arrs):
        return float((op(*[Tensor(a) for a in arrs]).data * w).sum())

    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*ts)
    out.backward(w)
    numeric = numeric_grad(scalar, arrays, h)
    return max(max_relative_error(t.grad, n) for t, n in zip(ts, numeric))


def random_tables(rng: np.random.Generator, rows: int, symbols: int, v_min: int = 0):
    """Random coding tables with occasional near-degenerate rows."""
    from octcodec.entropy import build_quantized_cdf

    alpha = rng.choice([0.05, 0.5, 2.0])
    pmf = rng.dirichlet(np.full(symbols, alpha), size=rows)
    return build_quantized_cdf(pmf, v_min), pmf


def sample_from_counts(rng: np.random.Generator, tables, index: np.ndarray) -> np.ndarray:
    """Draw one symbol per position from the quantized distributions themselves."""
    counts = tables.counts()[index].astype(np.float64)
    u = rng.random(len(index))[:, None]
    cum = np.cumsum(counts / counts.sum(axis=1, keepdims=True), axis=1)
    return (u > cum).sum(axis=1) + tables.v_min
