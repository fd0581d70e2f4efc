"""Image <-> container: quantized latents, coding tables and the six streams."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .container import Container, Stream
from .entropy import FactorizedModel, GaussianParams, build_quantized_cdf, gaussian_pmf, gaussian_tables
from .imageio import from_unit, pad_to_multiple, to_unit
from .layers import DualRes
from .model import SCHEME_IDS, STREAMS, OctaveCodecNet, quantize
from .rangecoder import RangeDecoder, rc_decode, rc_encode
from .tensor import Tensor

MIN_DIM = 8


class CodecError(ValueError):
    pass


@dataclass
class EncodeResult:
    container: Container
    latents: dict[str, np.ndarray]
    reconstruction: np.ndarray
    estimated_bits: dict[str, float]


def _require_full_model(model: OctaveCodecNet) -> None:
    if model.stage != 3:
        raise CodecError(f"coding needs a fully trained (stage 3) model, got stage {model.stage}")


def _factorized_model(model: OctaveCodecNet, name: str) -> FactorizedModel:
    return model.z_high_model if name == "zH" else model.z_low_model


def _channel_index(shape: tuple[int, ...]) -> np.ndarray:
    n, c, h, w = shape
    return np.broadcast_to(np.arange(c)[None, :, None, None], shape).reshape(-1)


def _symbol_range(q: np.ndarray) -> tuple[int, int]:
    return int(q.min()) - 1, int(q.max()) + 1


def _self_information(q: np.ndarray, pmf_rows: np.ndarray, index: np.ndarray, v_min: int) -> float:
    p = pmf_rows[index, q.reshape(-1).astype(np.int64) - v_min]
    return float(-np.log2(p).sum())


def _encode_factorized(q: np.ndarray, fm: FactorizedModel) -> tuple[Stream, float]:
    v_min, v_max = _symbol_range(q)
    pmf = fm.pmf_table(v_min, v_max)
    tables = build_quantized_cdf(pmf, v_min)
    idx = _channel_index(q.shape)
    est = _self_information(q, pmf, idx, v_min)
    return Stream(v_min, v_max, rc_encode(q.reshape(-1), tables, idx)), est


def _encode_gaussian(q: np.ndarray, params: GaussianParams) -> tuple[Stream, float]:
    v_min, v_max = _symbol_range(q)
    tables = gaussian_tables(params.mu.data, params.sigma.data, v_min, v_max)
    est = float(-np.log2(gaussian_pmf(q.reshape(-1), params.mu.data.reshape(-1), params.sigma.data.reshape(-1))).sum())
    return Stream(v_min, v_max, rc_encode(q.reshape(-1), tables)), est


def encode_array(model: OctaveCodecNet, img: np.ndarray) -> EncodeResult:
    """Compress an (H, W, 3) uint8 image."""
    _require_full_model(model)
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise CodecError("expected an (H, W, 3) uint8 RGB image")
    h, w = img.shape[:2]
    if h < MIN_DIM or w < MIN_DIM:
        raise CodecError(f"image {w}x{h} is smaller than {MIN_DIM}x{MIN_DIM}")
    cfg = model.config
    x = Tensor(to_unit(pad_to_multiple(img, cfg.padding_multiple)))
    with T.no_grad():
        y = model.analysis(x)
        y_q = y.map(lambda t: quantize(t, "eval"))
        y1_q = model.hyper_analysis_1(y_q).map(lambda t: quantize(t, "eval"))
        z_q = model.hyper_analysis_2(y1_q).map(lambda t: quantize(t, "eval"))
        params, _, _ = model.entropy_params(z_q, y1_q, y_q)
        x_hat = model.synthesis(y_q, clamp=True)

    latents = {
        "zH": z_q.high.data,
        "zL": z_q.low.data,
        "y1L": y1_q.low.data,
        "y1H": y1_q.high.data,
        "yL": y_q.low.data,
        "yH": y_q.high.data,
    }
    streams, est = {}, {}
    for name in ("zH", "zL"):
        streams[name], est[name] = _encode_factorized(latents[name], _factorized_model(model, name))
    for name in ("y1L", "y1H", "yL", "yH"):
        streams[name], est[name] = _encode_gaussian(latents[name], params[name])
    container = Container(w, h, SCHEME_IDS[cfg.hyper_scheme], cfg.N, streams)
    recon = from_unit(x_hat.data)[:h, :w]
    return EncodeResult(container, latents, recon, est)


def latent_shapes(model: OctaveCodecNet, height: int, width: int) -> dict[str, tuple[int, int, int, int]]:
    """Shapes of the six quantized latents for an image of the given true size."""
    cfg = model.config
    m = cfg.padding_multiple
    ph, pw = -(-height // m) * m, -(-width // m) * m
    half = cfg.N // 2
    from .model import HYPER_SCHEMES

    s = HYPER_SCHEMES[cfg.hyper_scheme]
    f_y = 16
    f_y1 = f_y * int(np.prod(s["h_e"]))
    f_z = f_y1 * int(np.prod(s["f_e"]))
    out = {}
    for name, f in (("yH", f_y), ("y1H", f_y1), ("zH", f_z)):
        out[name] = (1, half, ph // f, pw // f)
        out[name.replace("H", "L")] = (1, half, ph // (2 * f), pw // (2 * f))
    return out


def _check_header(model: OctaveCodecNet, c: Container) -> None:
    cfg = model.config
    if c.scheme != SCHEME_IDS[cfg.hyper_scheme] or c.N != cfg.N:
        raise CodecError(
            f"container was made for N={c.N}, scheme {c.scheme}; model has N={cfg.N}, {cfg.hyper_scheme}"
        )


def _decode_factorized_fast(model, c: Container, name: str, shape) -> np.ndarray:
    s = c.streams[name]
    tables = build_quantized_cdf(_factorized_model(model, name).pmf_table(s.v_min, s.v_max), s.v_min)
    return rc_decode(s.data, tables, int(np.prod(shape)), _channel_index(shape)).reshape(shape).astype(np.float64)


def _decode_gaussian_fast(c: Container, name: str, params: GaussianParams, shape) -> np.ndarray:
    s = c.streams[name]
    tables = gaussian_tables(params.mu.data, params.sigma.data, s.v_min, s.v_max)
    return rc_decode(s.data, tables, int(np.prod(shape))).reshape(shape).astype(np.float64)


def _decode_elementwise(c: Container, name: str, row_for, shape) -> np.ndarray:
    """Reference decoder forming each symbol's table only when it is reached."""
    s = c.streams[name]
    dec = RangeDecoder(s.data)
    n = int(np.prod(shape))
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i] = dec.decode(row_for(i)) + s.v_min
    dec.finish()
    return out.reshape(shape).astype(np.float64)


def _decode_factorized_serial(model, c: Container, name: str, shape) -> np.ndarray:
    s = c.streams[name]
    fm = _factorized_model(model, name)
    channels = _channel_index(shape)
    cache: dict[int, list[int]] = {}

    def row_for(i):
        ch = int(channels[i])
        if ch not in cache:
            pmf = fm.pmf_table(s.v_min, s.v_max)[ch]
            cache[ch] = build_quantized_cdf(pmf, s.v_min).cdf[0].tolist()
        return cache[ch]

    return _decode_elementwise(c, name, row_for, shape)


def _decode_gaussian_serial(c: Container, name: str, params: GaussianParams, shape) -> np.ndarray:
    s = c.streams[name]
    mu = params.mu.data.reshape(-1)
    sigma = params.sigma.data.reshape(-1)
    k = np.arange(s.v_min, s.v_max + 1, dtype=np.float64)[None, :]

    def row_for(i):
        pmf = gaussian_pmf(k, mu[i : i + 1, None], sigma[i : i + 1, None])
        return build_quantized_cdf(pmf, s.v_min).cdf[0].tolist()

    return _decode_elementwise(c, name, row_for, shape)


def decode_container(model: OctaveCodecNet, c: Container, parallel: bool = True) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Reconstruct the image; returns ((H, W, 3) uint8, decoded latents).

    ``parallel=True`` decodes the two independent hyper-latent streams
    concurrently and builds each stream's coding tables in one vectorized
    pass. ``parallel=False`` is the strictly sequential reference: streams
    one after another, each symbol's table formed when it is decoded.
    Both produce identical output.
    """
    _require_full_model(model)
    _check_header(model, c)
    shapes = latent_shapes(model, c.height, c.width)
    lat: dict[str, np.ndarray] = {}
    with T.no_grad():
        if parallel:
            with ThreadPoolExecutor(max_workers=2) as pool:
                futures = {n: pool.submit(_decode_factorized_fast, model, c, n, shapes[n]) for n in ("zH", "zL")}
                for n, f in futures.items():
                    lat[n] = f.result()
            dec_g = _decode_gaussian_fast
        else:
            for n in ("zH", "zL"):
                lat[n] = _decode_factorized_serial(model, c, n, shapes[n])
            dec_g = _decode_gaussian_serial

        z_q = DualRes(Tensor(lat["zH"]), Tensor(lat["zL"]))
        phi = model.hyper_synthesis_2(z_q)
        lat["y1L"] = dec_g(c, "y1L", model.params_y1_low(phi), shapes["y1L"])
        lat["y1H"] = dec_g(c, "y1H", model.crpe_e1(phi.high, Tensor(lat["y1L"])), shapes["y1H"])
        psi = model.hyper_synthesis_1(DualRes(Tensor(lat["y1H"]), Tensor(lat["y1L"])))
        lat["yL"] = dec_g(c, "yL", model.crpe_e2(psi.low, Tensor(lat["y1L"])), shapes["yL"])
        lat["yH"] = dec_g(c, "yH", model.crpe_e3(psi.high, Tensor(lat["yL"])), shapes["yH"])
        x_hat = model.synthesis(DualRes(Tensor(lat["yH"]), Tensor(lat["yL"])), clamp=True)
    return from_unit(x_hat.data)[: c.height, : c.width], lat


def stream_params(model: OctaveCodecNet, latents: dict[str, np.ndarray], v_range=(-32, 32)) -> dict[str, tuple[np.ndarray, ...]]:
    """Coding distribution of every stream computed from integer latents.

    Gaussian streams give (mu, sigma); the factorized hyper-latent streams give
    their pmf table over ``v_range``.
    """
    with T.no_grad():
        z_q = DualRes(Tensor(latents["zH"]), Tensor(latents["zL"]))
        y1_q = DualRes(Tensor(latents["y1H"]), Tensor(latents["y1L"]))
        y_q = DualRes(Tensor(latents["yH"]), Tensor(latents["yL"]))
        params, _, _ = model.entropy_params(z_q, y1_q, y_q)
    out = {name: (_factorized_model(model, name).pmf_table(*v_range),) for name in ("zH", "zL")}
    out.update({name: (p.mu.data, p.sigma.data) for name, p in params.items()})
    return out


def encode_latents(model: OctaveCodecNet, latents: dict[str, np.ndarray], width: int, height: int) -> Container:
    """Re-encode given integer latents (used for idempotence checks)."""
    with T.no_grad():
        z_q = DualRes(Tensor(latents["zH"]), Tensor(latents["zL"]))
        y1_q = DualRes(Tensor(latents["y1H"]), Tensor(latents["y1L"]))
        y_q = DualRes(Tensor(latents["yH"]), Tensor(latents["yL"]))
        params, _, _ = model.entropy_params(z_q, y1_q, y_q)
    streams = {}
    for name in ("zH", "zL"):
        streams[name], _ = _encode_factorized(latents[name], _factorized_model(model, name))
    for name in ("y1L", "y1H", "yL", "yH"):
        streams[name], _ = _encode_gaussian(latents[name], params[name])
    return Container(width, height, SCHEME_IDS[model.config.hyper_scheme], model.config.N, streams)


__all__ = ["EncodeResult", "CodecError", "encode_array", "decode_container", "encode_latents", "latent_shapes", "stream_params", "STREAMS"]
