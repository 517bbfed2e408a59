"""Raster helpers: grayscale conversion, histograms, resizing, tiling and file IO.

Images are plain numpy arrays. A gray image is a ``(height, width)`` uint8
array, an RGB image is ``(height, width, 3)`` uint8. Binary masks use uint8
values in {0, 1} in memory and {0, 255} on disk.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

GRAY_WEIGHTS = (0.299, 0.587, 0.114)
N_BINS = 256


class ImageFormatError(ValueError):
    pass


def as_gray(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a non-empty 2-D gray image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError("gray image values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma, rounded half-to-even and clamped to uint8."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.shape[0] < 1 or rgb.shape[1] < 1:
        raise ValueError(f"expected an (h, w, 3) RGB image, got shape {rgb.shape}")
    c = rgb.astype(np.float64)
    r, g, b = GRAY_WEIGHTS
    gray = r * c[..., 0] + g * c[..., 1] + b * c[..., 2]
    return np.clip(np.rint(gray), 0, 255).astype(np.uint8)


def compute_histogram(img: np.ndarray) -> np.ndarray:
    """256-bin intensity counts (int64). The total is ``counts.sum()``."""
    arr = np.asarray(img)
    if arr.size == 0:
        raise ValueError("empty input")
    return np.bincount(as_gray(arr).ravel(), minlength=N_BINS).astype(np.int64)


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    # Half-pixel-center sampling, source coordinates clamped to the valid range.
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear operator (n_out x n_in) for 1-D bilinear resampling."""
    if n_in < 1 or n_out < 1:
        raise ValueError("resize dimensions must be >= 1")
    return _bilinear_matrix(n_in, n_out)


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    img = as_gray(img)
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be >= 1, got {out_w}x{out_h}")
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    mh = bilinear_matrix(h, out_h)
    mw = bilinear_matrix(w, out_w)
    out = mh @ img.astype(np.float64) @ mw.T
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def resize_nearest(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Nearest-neighbour resize with half-pixel centers; dtype preserved (used for masks)."""
    arr = np.asarray(img)
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be >= 1, got {out_w}x{out_h}")
    h, w = arr.shape[:2]
    rows = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(np.int64), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(np.int64), w - 1)
    return arr[rows][:, cols]


def tile_image(img: np.ndarray, tile_w: int, tile_h: int) -> list[np.ndarray]:
    """Non-overlapping row-major tiles; partial tiles on the right/bottom edge are dropped."""
    img = as_gray(img)
    h, w = img.shape
    if tile_w < 1 or tile_h < 1:
        raise ValueError("tile dimensions must be >= 1")
    if tile_w > w or tile_h > h:
        raise ValueError(f"tile {tile_w}x{tile_h} larger than image {w}x{h}")
    return [
        img[r * tile_h:(r + 1) * tile_h, c * tile_w:(c + 1) * tile_w].copy()
        for r in range(h // tile_h)
        for c in range(w // tile_w)
    ]


# ---------------------------------------------------------------- file IO

_GRAY_MODES = {"L"}
_RGB_MODES = {"RGB"}


def read_image(path) -> np.ndarray:
    """Read an 8-bit PNG/PGM as gray (RGB input is converted to gray)."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode in _GRAY_MODES:
                return np.array(im, dtype=np.uint8)
            if mode in _RGB_MODES:
                return to_grayscale(np.array(im, dtype=np.uint8))
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    raise ImageFormatError(
        f"{path}: unsupported pixel format {mode!r}; only 8-bit gray or 8-bit RGB is accepted"
    )


def read_mask(path) -> np.ndarray:
    """Read a mask image; any nonzero pixel is foreground."""
    return (read_image(path) > 0).astype(np.uint8)


def write_image(path, img: np.ndarray) -> None:
    """Write a gray image; ``.pgm`` gives binary P5, anything else goes through PNG."""
    path = Path(path)
    img = as_gray(img)
    fmt = "PPM" if path.suffix.lower() == ".pgm" else "PNG"
    Image.fromarray(img).save(path, format=fmt)


def write_mask(path, mask: np.ndarray) -> None:
    write_image(path, (np.asarray(mask) > 0).astype(np.uint8) * 255)
