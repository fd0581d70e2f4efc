"""Three-stage training: core autoencoder, then the inner hyper layer, then everything."""

from __future__ import annotations

import configparser
import csv
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensor as T
from .imageio import list_images, read_image
from .losses import LossWeights, distortion, loss_if, loss_rd, loss_total, rate_split
from .model import HYPER_SCHEMES, ModelConfig, OctaveCodecNet
from .optim import Adam
from .tensor import Tensor

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "loss", "bpp_H", "bpp_L", "distortion")
DEFAULT_STAGE_SPLIT = (0.2, 0.2, 0.6)
CORE_MULTIPLE = 32


@dataclass
class TrainConfig:
    stage: int = 1
    iterations: int = 200
    batch_size: int = 8
    patch_size: int = 64
    lr: float = 4e-4
    seed: int = 0

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ValueError(f"stage must be 1, 2 or 3, got {self.stage}")
        if self.batch_size < 1 or self.iterations < 1:
            raise ValueError("batch size and iterations must be positive")
        if self.patch_size < CORE_MULTIPLE:
            raise ValueError(f"patch size {self.patch_size} is below {CORE_MULTIPLE}")


def stage_multiple(cfg: ModelConfig, stage: int) -> int:
    """Smallest input size multiple the layers active in ``stage`` accept."""
    if stage == 1:
        return CORE_MULTIPLE
    if stage == 2:
        return CORE_MULTIPLE * int(np.prod(HYPER_SCHEMES[cfg.hyper_scheme]["h_e"]))
    return cfg.padding_multiple


def stage_iterations(total: int, split=DEFAULT_STAGE_SPLIT) -> tuple[int, int, int]:
    n1 = max(1, int(round(total * split[0])))
    n2 = max(1, int(round(total * split[1])))
    return n1, n2, max(1, total - n1 - n2)


def ingest_patches(
    image_dir, patch_size: int, count: int, seed: int = 0, augment: bool = True, scale_range=(0.6, 1.0)
) -> np.ndarray:
    """Random crops as an (count, 3, P, P) array normalized to [-1, 1].

    With ``augment`` each crop is taken from a randomly rescaled and
    90-degree-rotated copy of a randomly chosen source image.
    """
    images = [read_image(p) for p in list_images(image_dir)]
    return patches_from_arrays(images, patch_size, count, seed, augment, scale_range)


def patches_from_arrays(images, patch_size: int, count: int, seed: int = 0, augment: bool = True, scale_range=(0.6, 1.0)) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = np.empty((count, 3, patch_size, patch_size))
    for i in range(count):
        img = images[rng.integers(len(images))]
        if augment:
            s = rng.uniform(*scale_range)
            h, w = img.shape[:2]
            nh, nw = max(patch_size, int(round(h * s))), max(patch_size, int(round(w * s)))
            if (nh, nw) != (h, w):
                img = np.asarray(Image.fromarray(img).resize((nw, nh), Image.BICUBIC))
            img = np.rot90(img, k=int(rng.integers(4)))
        h, w = img.shape[:2]
        if h < patch_size or w < patch_size:
            raise ValueError(f"image {w}x{h} smaller than patch size {patch_size}")
        top = int(rng.integers(h - patch_size + 1))
        left = int(rng.integers(w - patch_size + 1))
        crop = img[top : top + patch_size, left : left + patch_size]
        out[i] = crop.astype(np.float64).transpose(2, 0, 1) / 127.5 - 1.0
    return out


def compute_loss(model: OctaveCodecNet, x: Tensor, rng: np.random.Generator, use_fidelity: bool = True):
    """Training objective for the model's current stage.

    Returns (loss, stats) where stats holds floats for logging.
    """
    cfg = model.config
    n, _, h, w = x.shape
    m = stage_multiple(cfg, model.stage)
    ph, pw = (-h) % m, (-w) % m
    if ph or pw:
        # same edge replication as the coder; loss is measured on the true crop
        x_in = Tensor(np.pad(x.data, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge"))
        x_hat, bundle = model.forward_full(x_in, "train", rng)
        x_hat = T.crop(x_hat, h, w)
    else:
        x_hat, bundle = model.forward_full(x, "train", rng)
    dist = distortion(x, x_hat, cfg.metric)
    if model.stage == 1:
        loss = T.mul(dist, cfg.lam)
        return loss, {"loss": loss.item(), "bpp_H": 0.0, "bpp_L": 0.0, "distortion": dist.item()}
    r_high, r_low = rate_split(bundle.likelihoods, n * h * w)
    loss = loss_rd(T.add(r_high, r_low), dist, cfg.lam)
    if model.stage == 3 and use_fidelity:
        weights = LossWeights(cfg.lam, cfg.lambda1, cfg.lambda2)
        loss = loss_total(loss, loss_if(bundle.y.low, bundle.y1.low, model.probe_y, model.probe_y1, weights))
    stats = {"loss": loss.item(), "bpp_H": r_high.item(), "bpp_L": r_low.item(), "distortion": dist.item()}
    return loss, stats


def train_stage(
    model: OctaveCodecNet,
    stage: int,
    config: TrainConfig,
    patches: np.ndarray,
    log_path: str | Path | None = None,
    use_fidelity: bool = True,
) -> list[dict[str, float]]:
    """Optimize the parts of ``model`` active in ``stage``; returns the per-iteration log.

    Stage n needs a model that has completed stage n - 1.
    """
    if stage not in (1, 2, 3):
        raise ValueError(f"stage must be 1, 2 or 3, got {stage}")
    done = getattr(model, "trained_stage", 0)
    if done < stage - 1:
        raise RuntimeError(f"stage {stage} requested but the model has only completed stage {done}")
    if patches.ndim != 4 or patches.shape[1] != 3:
        raise ValueError("patches must be an (n, 3, P, P) array")

    model.stage = stage
    params = model.trainable(stage)
    opt = Adam(params, lr=config.lr)
    rng = np.random.default_rng(config.seed + 7919 * stage)
    history = []
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
    try:
        for it in range(1, config.iterations + 1):
            idx = rng.choice(len(patches), size=min(config.batch_size, len(patches)), replace=False)
            x = Tensor(patches[np.sort(idx)])
            opt.zero_grad()
            loss, stats = compute_loss(model, x, rng, use_fidelity)
            loss.backward()
            opt.step()
            model.project()
            row = {"iteration": it, **stats}
            history.append(row)
            if writer is not None:
                writer.writerow(row)
            if it % 50 == 0:
                log.info("stage %d iter %d loss %.4f", stage, it, stats["loss"])
    finally:
        if fh is not None:
            fh.close()
    model.trained_stage = max(done, stage)
    return history


def moving_average(values, window: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return np.array([v.mean()])
    c = np.cumsum(np.insert(v, 0, 0.0))
    return (c[window:] - c[:-window]) / window


# -- config files ----------------------------------------------------------------
def read_config(path: str | Path) -> tuple[ModelConfig, TrainConfig, dict]:
    """Parse an INI-style file with [model], [train] and optional [data] sections."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(path):
        raise ValueError(f"cannot read config {path}")

    def section(name, cls):
        if not parser.has_section(name):
            return cls()
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in parser.items(name):
            if key not in kinds:
                raise ValueError(f"unknown {name} option {key!r}")
            kind = kinds[key]
            kw[key] = int(raw) if kind in (int, "int") else float(raw) if kind in (float, "float") else raw
        return cls(**kw)

    data = dict(parser.items("data")) if parser.has_section("data") else {}
    return section("model", ModelConfig), section("train", TrainConfig), data


def write_config(path: str | Path, model_cfg: ModelConfig, train_cfg: TrainConfig, data: dict | None = None) -> None:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser["model"] = {k: str(v) for k, v in asdict(model_cfg).items()}
    parser["train"] = {k: str(v) for k, v in asdict(train_cfg).items()}
    if data:
        parser["data"] = {k: str(v) for k, v in data.items()}
    with open(path, "w") as fh:
        parser.write(fh)


def train_all(
    model: OctaveCodecNet,
    total_iterations: int,
    config: TrainConfig,
    patches: np.ndarray,
    log_dir: str | Path | None = None,
    use_fidelity: bool = True,
    split=DEFAULT_STAGE_SPLIT,
) -> dict[int, list[dict[str, float]]]:
    """Run the three stages back to back with the given iteration split."""
    out = {}
    for stage, n in zip((1, 2, 3), stage_iterations(total_iterations, split)):
        cfg = TrainConfig(stage, n, config.batch_size, config.patch_size, config.lr, config.seed)
        path = None if log_dir is None else Path(log_dir) / f"stage{stage}.csv"
        out[stage] = train_stage(model, stage, cfg, patches, path, use_fidelity)
    return out
