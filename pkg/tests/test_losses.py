import numpy as np
import pytest

from octcodec import tensor as T
from octcodec.losses import LossWeights, distortion, loss_if, loss_rd, loss_total, rate_split
from octcodec.model import FidelityProbe
from octcodec.tensor import Tensor

from helpers import gradcheck


def probe(channels=2, seed=0):
    return FidelityProbe(channels, 3, rng=np.random.default_rng(seed))


def test_loss_rd_arithmetic():
    assert loss_rd(Tensor(2.0), Tensor(100.0), 0.01).item() == pytest.approx(3.0)


def test_perfect_reconstruction_leaves_rate():
    x = Tensor(np.random.default_rng(0).uniform(-1, 1, (1, 3, 8, 8)))
    d = distortion(x, x)
    assert d.item() == 0.0
    assert loss_rd(Tensor(1.25), d, 0.05).item() == 1.25


def test_mse_on_255_scale():
    x = Tensor(np.zeros((1, 3, 2, 2)))
    y = Tensor(np.full((1, 3, 2, 2), 2 / 255))
    assert distortion(x, y).item() == pytest.approx(1.0)


def test_distortion_gradient_wrt_reconstruction():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, (1, 3, 4, 4))
    xh = rng.uniform(-1, 1, (1, 3, 4, 4))
    assert gradcheck(lambda a: loss_rd(Tensor(0.5), distortion(Tensor(x), a), 0.01), [xh]) < 1e-5


def test_loss_if_identity_probe_is_zero():
    p1, p2 = probe(), probe(seed=1)
    p1.set_identity()
    p2.set_identity()
    y = Tensor(np.random.default_rng(2).normal(size=(1, 2, 4, 4)))
    assert loss_if(y, y, p1, p2, LossWeights(0.01)).item() == 0.0


def test_loss_if_disabled_weights():
    y = Tensor(np.random.default_rng(3).normal(size=(1, 2, 4, 4)))
    assert loss_if(y, y, probe(), probe(seed=1), LossWeights(0.01, 0.0, 0.0)).item() == 0.0


def test_loss_if_scalar_hand_value():
    p = FidelityProbe(1, 1, rng=np.random.default_rng(0))
    p.conv.weight.data[:] = 1.5  # F(2) = 3
    p.conv.bias.data[:] = 0.0
    y = Tensor(np.full((1, 1, 1, 1), 2.0))
    assert loss_if(y, y, p, p, LossWeights(0.01, 1.0, 0.0)).item() == pytest.approx(1.0)


def test_loss_total_sums_components():
    assert loss_total(Tensor(3.0), Tensor(0.5)).item() == 3.5


def test_loss_if_gradient_reaches_probes_and_latents():
    p1, p2 = probe(), probe(seed=1)
    y = Tensor(np.random.default_rng(4).normal(size=(1, 2, 4, 4)), requires_grad=True)
    y1 = Tensor(np.random.default_rng(5).normal(size=(1, 2, 2, 2)), requires_grad=True)
    loss_if(y, y1, p1, p2, LossWeights(0.01)).backward()
    for t in (p1.conv.weight, p2.conv.weight, y, y1):
        assert t.grad is not None and np.abs(t.grad).max() > 0


def test_loss_if_gradient_check():
    rng = np.random.default_rng(6)
    p1, p2 = probe(), probe(seed=1)
    y, y1 = rng.normal(size=(1, 2, 3, 3)), rng.normal(size=(1, 2, 2, 2))
    w = LossWeights(0.01, 0.7, 1.3)
    assert gradcheck(lambda a, b: loss_if(a, b, p1, p2, w), [y, y1]) < 1e-5


def test_rate_split_groups_streams():
    lik = {s: Tensor(np.full(8, 0.5)) for s in ("zH", "zL", "y1L", "y1H", "yL")}
    lik["yH"] = Tensor(np.full(8, 0.25))
    high, low = rate_split(lik, 4)
    assert low.item() == pytest.approx(3 * 8 / 4)
    assert high.item() == pytest.approx((8 + 8 + 16) / 4)


def test_negative_weights_rejected():
    with pytest.raises(ValueError):
        LossWeights(0.01, -1.0)
