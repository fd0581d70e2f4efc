"""8-bit RGB image I/O (PNG, binary PPM) and normalization helpers."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png", ".ppm")


def read_image(path: str | Path) -> np.ndarray:
    """Load an image as an (H, W, 3) uint8 array."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("RGB", "L", "RGBA", "P"):
                raise ValueError(f"{path}: unsupported image mode {im.mode}")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from None
    return arr


def write_image(path: str | Path, img: np.ndarray) -> None:
    path = Path(path)
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) uint8 image")
    fmt = "PPM" if path.suffix.lower() == ".ppm" else "PNG"
    Image.fromarray(img, "RGB").save(path, format=fmt)


def list_images(directory: str | Path) -> list[Path]:
    files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ValueError(f"no PNG/PPM images in {directory}")
    return files


def to_unit(img: np.ndarray) -> np.ndarray:
    """(H, W, 3) uint8 -> (1, 3, H, W) float in [-1, 1] via x / 127.5 - 1."""
    return (np.asarray(img, dtype=np.float64) / 127.5 - 1.0).transpose(2, 0, 1)[None]


def from_unit(x: np.ndarray) -> np.ndarray:
    """(1, 3, H, W) float in [-1, 1] -> (H, W, 3) uint8, rounded and clamped."""
    v = (np.asarray(x[0], dtype=np.float64).transpose(1, 2, 0) + 1.0) * 127.5
    return np.clip(np.floor(v + 0.5), 0, 255).astype(np.uint8)


def pad_to_multiple(img: np.ndarray, multiple: int) -> np.ndarray:
    """Replicate-pad the bottom/right edges of an (H, W, C) image."""
    h, w = img.shape[:2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return img
    return np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")
