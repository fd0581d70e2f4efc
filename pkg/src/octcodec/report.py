"""Bit-allocation reports and rate-distortion curves."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .codec import decode_container, encode_array
from .container import Container
from .imageio import list_images, read_image
from .metrics import ms_ssim, msssim_db, psnr
from .model import load_model

RD_COLUMNS = ("model", "bpp", "psnr", "msssim", "msssim_db")


@dataclass
class RdPoint:
    model: str
    bpp: float
    psnr: float
    msssim: float
    msssim_db: float

    def __post_init__(self):
        if self.bpp <= 0:
            raise ValueError("bpp must be positive")
        if not 0.0 <= self.msssim <= 1.0:
            raise ValueError(f"msssim {self.msssim} outside [0, 1]")


def ratio_string(bpp_low: float, bpp_high: float) -> str:
    """LR:HR share written as ``1:r`` with r = bpp_H / bpp_L."""
    if bpp_low <= 0:
        return "1:inf"
    return f"1:{bpp_high / bpp_low:.4f}"


def bit_allocation_report(container: Container) -> dict:
    alloc = container.bit_allocation()
    alloc["ratio"] = ratio_string(alloc["bpp_L"], alloc["bpp_H"])
    return alloc


def evaluate_image(model, img: np.ndarray, name: str = "") -> RdPoint:
    res = encode_array(model, img)
    blob = res.container.serialize()
    recon, _ = decode_container(model, Container.parse(blob))
    m = ms_ssim(img, recon)
    bpp = 8 * len(blob) / (img.shape[0] * img.shape[1])
    return RdPoint(name, bpp, psnr(img, recon), m, msssim_db(m))


def average_points(points: list[RdPoint], name: str) -> RdPoint:
    return RdPoint(
        name,
        float(np.mean([p.bpp for p in points])),
        float(np.mean([p.psnr for p in points])),
        float(np.mean([p.msssim for p in points])),
        float(np.mean([p.msssim_db for p in points])),
    )


def rd_curve(image_dir, checkpoints, out_csv=None, plot=None) -> list[RdPoint]:
    """One averaged point per checkpoint over every image in ``image_dir``, sorted by bpp."""
    images = [read_image(p) for p in list_images(image_dir)]
    rows = []
    for ckpt in checkpoints:
        model = load_model(ckpt)
        rows.append(average_points([evaluate_image(model, im) for im in images], Path(ckpt).stem))
    rows.sort(key=lambda p: p.bpp)
    if out_csv is not None:
        write_rd_csv(out_csv, rows)
    if plot is not None:
        write_svg(plot, rows)
    return rows


def write_rd_csv(path, rows: list[RdPoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RD_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))


def read_curve(path, quality: str = "psnr") -> tuple[np.ndarray, np.ndarray]:
    """(bpp, quality) columns of an R-D CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no rows")
    if "bpp" not in rows[0] or quality not in rows[0]:
        raise ValueError(f"{path}: needs columns bpp and {quality}")
    return np.array([float(r["bpp"]) for r in rows]), np.array([float(r[quality]) for r in rows])


def write_svg(path, rows: list[RdPoint], quality: str = "psnr", size=(480, 360)) -> None:
    """Minimal line plot of quality against bpp."""
    w, h = size
    pad = 40
    xs = np.array([r.bpp for r in rows])
    ys = np.array([getattr(r, quality) for r in rows])

    def scale(v, lo, hi, a, b):
        return a + (v - lo) / (hi - lo) * (b - a) if hi > lo else (a + b) / 2

    px = [scale(x, xs.min(), xs.max(), pad, w - pad) for x in xs]
    py = [scale(y, ys.min(), ys.max(), h - pad, pad) for y in ys]
    pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(px, py))
    dots = "".join(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="3"/>' for x, y in zip(px, py))
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">'
        f'<rect width="{w}" height="{h}" fill="white"/>'
        f'<polyline points="{pts}" fill="none" stroke="black"/>{dots}'
        f'<text x="{w / 2}" y="{h - 8}" text-anchor="middle">bpp</text>'
        f'<text x="12" y="{h / 2}" transform="rotate(-90 12 {h / 2})" text-anchor="middle">{quality}</text>'
        "</svg>"
    )
    Path(path).write_text(svg)
