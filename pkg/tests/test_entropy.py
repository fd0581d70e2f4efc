import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from octcodec import tensor as T
from octcodec.entropy import (
    PROB_FLOOR,
    TOTAL,
    FactorizedModel,
    GaussianParams,
    build_quantized_cdf,
    estimate_rate,
    factorized_pmf,
    gaussian_likelihood,
    gaussian_pmf,
    gaussian_tables,
    quantize_pmf,
)
from octcodec.optim import Adam
from octcodec.tensor import Tensor

from helpers import gradcheck


def test_gaussian_pmf_center_bin_matches_erf():
    assert abs(gaussian_pmf(0, 0.0, 1.0) - math.erf(0.5 / math.sqrt(2))) < 1e-15
    assert abs(gaussian_pmf(0, 0.0, 1.0) - 0.3829249) < 1e-7


def test_gaussian_pmf_symmetry():
    k = np.arange(-8, 9)
    p = gaussian_pmf(k, 0.0, 2.3)
    assert (p == p[::-1]).all()


def test_gaussian_pmf_tiny_sigma():
    assert abs(gaussian_pmf(0, 0.0, 1e-9) - 1.0) < 1e-12


@settings(max_examples=60, deadline=None)
@given(mu=st.floats(-50, 50), sigma=st.floats(1e-3, 30))
def test_gaussian_pmf_sums_to_one(mu, sigma):
    k = np.arange(math.floor(mu - 40 * sigma - 1), math.ceil(mu + 40 * sigma + 1) + 1)
    assert abs(gaussian_pmf(k, mu, sigma, floor=False).sum() - 1.0) < 1e-9


def test_gaussian_pmf_far_tail_is_floored():
    assert gaussian_pmf(100, 0.0, 1.0) == PROB_FLOOR


def test_gaussian_likelihood_matches_pmf():
    rng = np.random.default_rng(0)
    k = rng.integers(-5, 6, size=(1, 2, 3, 3)).astype(float)
    mu, sigma = rng.normal(size=k.shape), rng.uniform(0.3, 3, size=k.shape)
    lik = gaussian_likelihood(Tensor(k), GaussianParams(Tensor(mu), Tensor(sigma)))
    np.testing.assert_allclose(lik.data, gaussian_pmf(k, mu, sigma), rtol=1e-12)


def test_estimate_rate_examples():
    assert estimate_rate(Tensor(np.full(100, 0.5))).item() == pytest.approx(100.0, abs=1e-12)
    assert estimate_rate(Tensor(np.full(64, 1 / 256))).item() == pytest.approx(512.0, abs=1e-9)


def test_rate_gradient_wrt_mu_and_sigma():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 2, 3, 3)) * 2
    mu = rng.normal(size=x.shape)
    sigma = rng.uniform(0.5, 2.0, size=x.shape)

    def op(m, s):
        return estimate_rate(gaussian_likelihood(Tensor(x), GaussianParams(m, s)))

    assert gradcheck(op, [mu, sigma]) < 1e-5


def test_rate_nonnegative_and_equals_self_information_at_eval():
    rng = np.random.default_rng(2)
    k = rng.integers(-3, 4, size=(1, 1, 4, 4)).astype(float)
    mu, sigma = rng.normal(size=k.shape), rng.uniform(0.5, 2, size=k.shape)
    bits = estimate_rate(gaussian_likelihood(Tensor(k), GaussianParams(Tensor(mu), Tensor(sigma)))).item()
    assert bits >= 0
    assert bits == pytest.approx(-np.log2(gaussian_pmf(k, mu, sigma)).sum(), rel=1e-12)


# -- factorized model -------------------------------------------------------------
def trained_factorized(seed=0):
    """Fit a factorized model to Laplace-ish integer data for a few hundred steps."""
    rng = np.random.default_rng(seed)
    fm = FactorizedModel(2)
    opt = Adam(fm.parameters(), lr=0.05)
    data = np.round(rng.laplace(0, [[1.5], [4.0]], size=(2, 400))).T.reshape(400, 2, 1, 1)
    for _ in range(200):
        opt.zero_grad()
        noisy = data + rng.uniform(-0.5, 0.5, size=data.shape)
        estimate_rate(fm.likelihood(Tensor(noisy))).backward()
        opt.step()
    return fm


def test_factorized_pmf_sums_to_one_after_training():
    fm = trained_factorized()
    for ch in range(2):
        p = factorized_pmf(np.arange(-30, 31), fm, ch, floor=False)
        assert p.min() >= 0
        assert abs(p.sum() - 1.0) < 1e-3


def test_factorized_cdf_monotone():
    fm = trained_factorized(1)
    c = fm.cdf(np.linspace(-40, 40, 801))
    assert (np.diff(c, axis=1) >= 0).all()


def test_factorized_likelihood_matches_table():
    fm = FactorizedModel(3)
    x = np.random.default_rng(3).integers(-4, 5, size=(2, 3, 2, 2)).astype(float)
    lik = fm.likelihood(Tensor(x)).data
    table = fm.pmf_table(-4, 4)
    expected = table[np.arange(3)[None, :, None, None], (x + 4).astype(int)]
    np.testing.assert_allclose(lik, expected, rtol=1e-9)


def test_factorized_rate_gradient():
    fm = FactorizedModel(2)
    x = np.random.default_rng(4).normal(size=(1, 2, 2, 2)) * 2
    names = [n for n, _ in fm.named_parameters()]

    def op(xx, *ws):
        saved = [getattr(fm, n) for n in names]
        for n, w in zip(names, ws):
            setattr(fm, n, w)
        try:
            return estimate_rate(fm.likelihood(xx))
        finally:
            for n, s in zip(names, saved):
                setattr(fm, n, s)

    arrays = [x] + [p.data.copy() for _, p in fm.named_parameters()]
    assert gradcheck(op, arrays) < 1e-5


# -- quantized tables -----------------------------------------------------------------
def test_quantize_two_equal_symbols():
    np.testing.assert_array_equal(quantize_pmf(np.array([0.5, 0.5])), [32768, 32768])


def test_quantize_certain_symbol_gets_floor():
    np.testing.assert_array_equal(quantize_pmf(np.array([1.0, 0.0])), [65535, 1])


@settings(max_examples=60, deadline=None)
@given(k=st.integers(2, 300), seed=st.integers(0, 10_000))
def test_quantize_within_rounding_of_pmf(k, seed):
    rng = np.random.default_rng(seed)
    pmf = rng.dirichlet(np.full(k, 0.5))
    counts = quantize_pmf(pmf)
    assert counts.sum() == TOTAL and counts.min() >= 1
    floored = counts == 1
    dev = np.abs(counts / TOTAL - pmf)
    bad = np.flatnonzero((dev > 2.0**-15) & ~floored)
    # floored entries are lifted to 1 and a single largest entry pays for them
    assert len(bad) <= 1
    if len(bad):
        assert dev[bad[0]] <= (floored.sum() + 1) / TOTAL


def test_build_quantized_cdf_rows():
    q = build_quantized_cdf(np.array([[0.25, 0.25, 0.5], [0.1, 0.2, 0.7]]), v_min=-1)
    assert q.cdf.shape == (2, 4)
    assert (q.cdf[:, 0] == 0).all() and (q.cdf[:, -1] == TOTAL).all()
    assert (np.diff(q.cdf, axis=1) > 0).all()
    assert q.v_min == -1 and q.v_max == 1


def test_gaussian_tables_one_row_per_element():
    mu = np.zeros((1, 2, 2, 2))
    q = gaussian_tables(mu, np.ones_like(mu), -5, 5)
    assert q.cdf.shape == (8, 12)


def test_quantize_rejects_bad_pmf():
    with pytest.raises(ValueError):
        quantize_pmf(np.array([0.5, -0.1]))
    with pytest.raises(ValueError):
        quantize_pmf(np.zeros(3))
