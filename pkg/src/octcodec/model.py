"""The codec network: core autoencoder, two hyper layers and the CRPE estimators.

Decode order of the six coded streams::

    zH, zL  ->  y1L  ->  y1H  ->  yL  ->  yH

* ``zH``/``zL``: factorized models, no side information.
* ``y1L``: Gaussian from Phi_L = f_d(z).
* ``y1H``: Gaussian from E1(Phi_H, y1L).
* ``yL``:  Gaussian from E2(Psi_L, y1L) where Psi = h_d(y1H, y1L).
* ``yH``:  Gaussian from E3(Psi_H, yL).

Every entropy parameter is computed by the same function on the encoder and
the decoder side, from already decoded integer latents only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .entropy import FactorizedModel, GaussianParams, gaussian_likelihood
from .layers import DualRes, GoConv, GoTConv, leaky_relu
from .nn import Conv2d, ConvTranspose2d, Module
from .tensor import Tensor, round_half_away

STREAMS = ("zH", "zL", "y1L", "y1H", "yL", "yH")
LOW_STREAMS = ("zL", "y1L", "yL")
HIGH_STREAMS = ("zH", "y1H", "yH")
RAW_SCALE_BOUND = 10.0

# per-layer strides of the hyper transforms; decoders run the mirrored order
HYPER_SCHEMES = {
    "scheme1": {"h_e": (1, 2, 2), "f_e": (2, 1, 1)},
    "scheme2": {"h_e": (1, 2, 1), "f_e": (1, 2, 1)},
}
SCHEME_IDS = {"scheme1": 1, "scheme2": 2}


@dataclass
class ModelConfig:
    N: int = 32
    lam: float = 0.01
    hyper_scheme: str = "scheme1"
    lambda1: float = 1.0
    lambda2: float = 1.0
    metric: str = "mse"
    kernel: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.N < 2 or self.N % 2:
            raise ValueError(f"N must be a positive even number, got {self.N}")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("information-fidelity weights must be non-negative")
        if self.hyper_scheme not in HYPER_SCHEMES:
            raise ValueError(f"unknown hyper scheme {self.hyper_scheme!r}")
        if self.metric not in ("mse", "ms-ssim"):
            raise ValueError(f"metric must be 'mse' or 'ms-ssim', got {self.metric!r}")
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")

    @property
    def downsampling(self) -> int:
        """Ratio between image size and the smallest latent (z low branch)."""
        s = HYPER_SCHEMES[self.hyper_scheme]
        return 32 * math.prod(s["h_e"]) * math.prod(s["f_e"])

    @property
    def padding_multiple(self) -> int:
        return self.downsampling


@dataclass
class LatentBundle:
    y: DualRes
    y1: DualRes
    z: DualRes | None
    y_q: DualRes
    y1_q: DualRes
    z_q: DualRes | None
    phi: DualRes | None = None
    psi: DualRes | None = None
    params: dict[str, GaussianParams] = field(default_factory=dict)
    likelihoods: dict[str, Tensor] = field(default_factory=dict)


def quantize(x: Tensor, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Additive U(-1/2, 1/2) noise when training, round-half-away-from-zero otherwise."""
    if mode == "train":
        if rng is None:
            raise ValueError("training-mode quantization needs a random generator")
        return T.add_uniform_noise(x, rng)
    if mode == "eval":
        return Tensor(round_half_away(x.data))
    raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")


def scale_from_raw(raw: Tensor) -> Tensor:
    return T.exp(T.clamp(raw, -RAW_SCALE_BOUND, RAW_SCALE_BOUND))


def split_params(t: Tensor) -> GaussianParams:
    c = t.shape[1] // 2
    return GaussianParams(mu=T.channel_slice(t, 0, c), sigma=scale_from_raw(T.channel_slice(t, c, 2 * c)))


def _log2_exact(ratio: int) -> int:
    if ratio < 1 or ratio & (ratio - 1):
        raise ValueError(f"resolution ratio {ratio} is not a power of two")
    return ratio.bit_length() - 1


class CRPE(Module):
    """Cross-resolution parameter estimator.

    Upsamples the already decoded latent with stride-2 transposed convolutions
    (leaky ReLU after each) until it reaches the feature resolution, fuses it
    with the features by channel concatenation and emits (mu, sigma) through
    two stride-1 convolutions.
    """

    def __init__(self, c_latent: int, c_feat: int, c_target: int, ratio: int, hidden: int, kernel: int, *, rng):
        self.num_up = _log2_exact(ratio)
        self.ups = [ConvTranspose2d(c_latent, c_latent, kernel, 2, rng=rng) for _ in range(self.num_up)]
        self.fuse = Conv2d(c_latent + c_feat, hidden, kernel, 1, rng=rng)
        self.head = Conv2d(hidden, 2 * c_target, kernel, 1, rng=rng)

    def __call__(self, feat: Tensor, latent: Tensor) -> GaussianParams:
        ratio = feat.shape[2] // latent.shape[2]
        if feat.shape[2] != latent.shape[2] * ratio or feat.shape[3] != latent.shape[3] * ratio:
            raise ValueError(f"feature {feat.shape[2:]} is not an integer multiple of latent {latent.shape[2:]}")
        if _log2_exact(ratio) != self.num_up:
            raise ValueError(f"estimator built for ratio {2 ** self.num_up}, got {ratio}")
        h = latent
        for up in self.ups:
            h = leaky_relu(up(h))
        h = leaky_relu(self.fuse(T.concat([h, feat], axis=1)))
        return split_params(self.head(h))


class FidelityProbe(Module):
    """F(v; theta): one k x k stride-1 convolution without activation."""

    def __init__(self, channels: int, kernel: int = 3, *, rng):
        self.conv = Conv2d(channels, channels, kernel, 1, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv(x)

    def set_identity(self) -> None:
        w = np.zeros_like(self.conv.weight.data)
        k = w.shape[2] // 2
        for c in range(w.shape[0]):
            w[c, c, k, k] = 1.0
        self.conv.weight.data = w
        self.conv.bias.data = np.zeros_like(self.conv.bias.data)


class OctaveCodecNet(Module):
    """All trainable parts of the codec.

    ``stage`` selects which parts take part in :meth:`forward_full`:
    1 = core autoencoder only, 2 = plus the first hyper layer with a
    factorized prior on y1, 3 = full model.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self.stage = 3
        self.trained_stage = 0
        rng = np.random.default_rng(config.seed)
        N, k = config.N, config.kernel
        half = N // 2
        scheme = HYPER_SCHEMES[config.hyper_scheme]

        self.g_e = [
            GoConv(3, 0, half, half, 2, k, "gdn", rng=rng),
            GoConv(half, half, half, half, 2, k, "gdn", rng=rng),
            GoConv(half, half, half, half, 2, k, "gdn", rng=rng),
            GoConv(half, half, half, half, 2, k, None, rng=rng),
        ]
        self.g_d = [
            GoTConv(half, half, half, half, 2, k, "igdn", rng=rng),
            GoTConv(half, half, half, half, 2, k, "igdn", rng=rng),
            GoTConv(half, half, half, half, 2, k, "igdn", rng=rng),
            GoTConv(half, half, 3, 0, 2, k, None, rng=rng),
        ]
        self.h_e = self._encoder(scheme["h_e"], half, rng)
        self.h_d = self._decoder(tuple(reversed(scheme["h_e"])), half, N, N, rng)
        self.f_e = self._encoder(scheme["f_e"], half, rng)
        # Phi_L carries (mu, raw scale) of y1L; Phi_H feeds E1
        self.f_d = self._decoder(tuple(reversed(scheme["f_e"])), half, N, 2 * half, rng)

        up_h = math.prod(scheme["h_e"])
        self.e1 = CRPE(half, N, half, 2, N, k, rng=rng)
        self.e2 = CRPE(half, N, half, up_h, N, k, rng=rng)
        self.e3 = CRPE(half, N, half, 2, N, k, rng=rng)

        self.z_high_model = FactorizedModel(half)
        self.z_low_model = FactorizedModel(half)
        # stage-2 stand-in prior on y1 before the outer hyper layer exists
        self.y1_high_model = FactorizedModel(half)
        self.y1_low_model = FactorizedModel(half)

        self.probe_y = FidelityProbe(half, k, rng=rng)
        self.probe_y1 = FidelityProbe(half, k, rng=rng)

    @staticmethod
    def _encoder(strides, c, rng):
        acts = ["leaky"] * (len(strides) - 1) + [None]
        return [GoConv(c, c, c, c, s, 3, a, rng=rng) for s, a in zip(strides, acts)]

    @staticmethod
    def _decoder(strides, c, out_high, out_low, rng):
        layers = []
        for i, s in enumerate(strides):
            last = i == len(strides) - 1
            layers.append(
                GoTConv(c, c, out_high if last else c, out_low if last else c, s, 3, None if last else "leaky", rng=rng)
            )
        return layers

    # -- parameter groups ------------------------------------------------------
    def group(self, name: str) -> list[Tensor]:
        parts = {
            "core": ("g_e", "g_d"),
            "hyper1": ("h_e", "h_d", "y1_high_model", "y1_low_model"),
            "hyper2": ("f_e", "f_d", "z_high_model", "z_low_model", "e1", "e2", "e3"),
            "probe": ("probe_y", "probe_y1"),
        }[name]
        return [p for n, p in self.named_parameters() if n.split(".")[0] in parts]

    def trainable(self, stage: int | None = None) -> list[Tensor]:
        stage = self.stage if stage is None else stage
        params = self.group("core")
        if stage >= 2:
            params += self.group("hyper1")
        if stage >= 3:
            params += self.group("hyper2") + self.group("probe")
        return params

    # -- transforms ------------------------------------------------------------
    @staticmethod
    def _run(layers, x: DualRes) -> DualRes:
        for layer in layers:
            x = layer(x)
        return x

    def analysis(self, x: Tensor) -> DualRes:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected an (N, 3, H, W) image batch, got {x.shape}")
        if x.shape[2] % 32 or x.shape[3] % 32:
            raise ValueError(f"image size {x.shape[2:]} must be divisible by 32")
        return self._run(self.g_e, DualRes(x, None))

    def synthesis(self, y_q: DualRes, clamp: bool = False) -> Tensor:
        out = self._run(self.g_d, y_q).high
        return T.clamp(out, -1.0, 1.0) if clamp else out

    def hyper_analysis_1(self, y_q: DualRes) -> DualRes:
        return self._run(self.h_e, y_q)

    def hyper_analysis_2(self, y1_q: DualRes) -> DualRes:
        return self._run(self.f_e, y1_q)

    def hyper_synthesis_2(self, z_q: DualRes) -> DualRes:
        return self._run(self.f_d, z_q)

    def hyper_synthesis_1(self, y1_q: DualRes) -> DualRes:
        return self._run(self.h_d, y1_q)

    def crpe_e1(self, phi_high: Tensor, y1_low_q: Tensor) -> GaussianParams:
        return self.e1(phi_high, y1_low_q)

    def crpe_e2(self, psi_low: Tensor, y1_low_q: Tensor) -> GaussianParams:
        return self.e2(psi_low, y1_low_q)

    def crpe_e3(self, psi_high: Tensor, y_low_q: Tensor) -> GaussianParams:
        return self.e3(psi_high, y_low_q)

    # -- entropy parameters in causal order ----------------------------------------
    def params_y1_low(self, phi: DualRes) -> GaussianParams:
        return split_params(phi.low)

    def entropy_params(self, z_q: DualRes, y1_q: DualRes, y_q: DualRes) -> tuple[dict[str, GaussianParams], DualRes, DualRes]:
        """(mu, sigma) for y1L, y1H, yL, yH.

        Each entry reads only streams earlier in the decode order, which the
        causality probes check by perturbation.
        """
        phi = self.hyper_synthesis_2(z_q)
        params = {"y1L": self.params_y1_low(phi), "y1H": self.crpe_e1(phi.high, y1_q.low)}
        psi = self.hyper_synthesis_1(y1_q)
        params["yL"] = self.crpe_e2(psi.low, y1_q.low)
        params["yH"] = self.crpe_e3(psi.high, y_q.low)
        return params, phi, psi

    # -- whole pipeline ----------------------------------------------------------
    def forward_full(self, x: Tensor, mode: str = "train", rng: np.random.Generator | None = None):
        """Run the full pipeline for the current stage; returns (x_hat, bundle)."""
        y = self.analysis(x)
        y_q = y.map(lambda t: quantize(t, mode, rng))
        x_hat = self.synthesis(y_q, clamp=(mode == "eval"))
        if self.stage == 1:
            return x_hat, LatentBundle(y=y, y1=None, z=None, y_q=y_q, y1_q=None, z_q=None)

        y1 = self.hyper_analysis_1(y_q)
        y1_q = y1.map(lambda t: quantize(t, mode, rng))
        if self.stage == 2:
            psi = self.hyper_synthesis_1(y1_q)
            params = {"yL": split_params(psi.low), "yH": split_params(psi.high)}
            lik = {
                "y1H": self.y1_high_model.likelihood(y1_q.high),
                "y1L": self.y1_low_model.likelihood(y1_q.low),
                "yL": gaussian_likelihood(y_q.low, params["yL"]),
                "yH": gaussian_likelihood(y_q.high, params["yH"]),
            }
            bundle = LatentBundle(y, y1, None, y_q, y1_q, None, None, psi, params, lik)
            return x_hat, bundle

        z = self.hyper_analysis_2(y1_q)
        z_q = z.map(lambda t: quantize(t, mode, rng))
        params, phi, psi = self.entropy_params(z_q, y1_q, y_q)
        lik = {
            "zH": self.z_high_model.likelihood(z_q.high),
            "zL": self.z_low_model.likelihood(z_q.low),
            "y1L": gaussian_likelihood(y1_q.low, params["y1L"]),
            "y1H": gaussian_likelihood(y1_q.high, params["y1H"]),
            "yL": gaussian_likelihood(y_q.low, params["yL"]),
            "yH": gaussian_likelihood(y_q.high, params["yH"]),
        }
        return x_hat, LatentBundle(y, y1, z, y_q, y1_q, z_q, phi, psi, params, lik)

    def project(self) -> None:
        """Reproject constrained parameters after an optimizer step."""
        from .layers import GDN

        for m in self.modules():
            if isinstance(m, GDN):
                m.project()


def config_with(config: ModelConfig, **changes) -> ModelConfig:
    return replace(config, **changes)


_METRIC_IDS = {"mse": 0, "ms-ssim": 1}


def save_model(path, model: OctaveCodecNet) -> None:
    """Write weights plus the configuration as ``meta.*`` scalar records."""
    from . import checkpoint

    cfg = model.config
    meta = {
        "meta.N": cfg.N,
        "meta.lam": cfg.lam,
        "meta.hyper_scheme": SCHEME_IDS[cfg.hyper_scheme],
        "meta.lambda1": cfg.lambda1,
        "meta.lambda2": cfg.lambda2,
        "meta.metric": _METRIC_IDS[cfg.metric],
        "meta.kernel": cfg.kernel,
        "meta.seed": cfg.seed,
        "meta.stage": model.stage,
        "meta.trained_stage": model.trained_stage,
    }
    records = {k: np.array([float(v)]) for k, v in meta.items()}
    records.update(model.state_dict())
    checkpoint.save(path, records)


def load_model(path) -> OctaveCodecNet:
    from . import checkpoint

    records = checkpoint.load(path)
    try:
        meta = {k[5:]: float(records.pop(k).reshape(-1)[0]) for k in list(records) if k.startswith("meta.")}
        schemes = {v: k for k, v in SCHEME_IDS.items()}
        metrics = {v: k for k, v in _METRIC_IDS.items()}
        cfg = ModelConfig(
            N=int(meta["N"]),
            lam=meta["lam"],
            hyper_scheme=schemes[int(meta["hyper_scheme"])],
            lambda1=meta["lambda1"],
            lambda2=meta["lambda2"],
            metric=metrics[int(meta["metric"])],
            kernel=int(meta["kernel"]),
            seed=int(meta["seed"]),
        )
    except KeyError as exc:
        raise checkpoint.CheckpointError(f"checkpoint lacks model metadata {exc}") from None
    model = OctaveCodecNet(cfg)
    model.load_state_dict(records)
    model.stage = int(meta.get("stage", 3))
    model.trained_stage = int(meta.get("trained_stage", 0))
    return model
