"""Dataset plumbing: manifests, splits, augmentation and the synthetic blob generator."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .imaging import read_image, read_mask, resize_bilinear, resize_nearest, write_image, write_mask

SPLITS = ("train", "val", "test")
MANIFEST_HEADER = ("image", "mask", "split")
DEFAULT_RATIOS = (0.7, 0.1, 0.2)


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    image_path: Path
    mask_path: Optional[Path] = None
    split: Optional[str] = None
    invert: bool = False


@dataclass(frozen=True)
class AugmentSpec:
    resize_to: Optional[tuple[int, int]] = None  # (width, height)
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    brightness_delta: float = 0.0
    contrast_range: tuple[float, float] = (1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        for name in ("hflip_p", "vflip_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")
        lo, hi = self.contrast_range
        if lo <= 0 or hi <= 0 or lo > hi:
            raise ValueError(f"contrast range must be positive and ordered, got {self.contrast_range}")
        if self.brightness_delta < 0:
            raise ValueError("brightness_delta must be >= 0")

    def replace(self, **changes) -> "AugmentSpec":
        return dataclasses.replace(self, **changes)


# ------------------------------------------------------------------ manifest

def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("", "0", "false", "no"):
        return False
    if t in ("1", "true", "yes"):
        return True
    raise ValueError(f"not a boolean: {text!r}")


def load_manifest(path) -> list[ManifestEntry]:
    """Read an ``image,mask,split[,invert]`` CSV; paths are relative to the manifest's directory."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return []
    header = [c.strip() for c in rows[0]]
    if tuple(header[:3]) != MANIFEST_HEADER or header[3:] not in ([], ["invert"]):
        raise ManifestError(f"{path}: header must be 'image,mask,split[,invert]', got {','.join(header)!r}")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not any(c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ManifestError(f"{path}, row {lineno}: expected {len(header)} fields, got {len(row)}")
        image, mask, split = (c.strip() for c in row[:3])
        if not image:
            raise ManifestError(f"{path}, row {lineno}: missing image path")
        image_path = root / image
        if not image_path.is_file():
            raise ManifestError(f"{path}, row {lineno}: image not found: {image_path}")
        mask_path = root / mask if mask else None
        if mask_path is not None and not mask_path.is_file():
            raise ManifestError(f"{path}, row {lineno}: mask not found: {mask_path}")
        if split and split not in SPLITS:
            raise ManifestError(f"{path}, row {lineno}: unknown split {split!r}")
        try:
            invert = _parse_bool(row[3]) if len(row) > 3 else False
        except ValueError as exc:
            raise ManifestError(f"{path}, row {lineno}: {exc}") from None
        entries.append(ManifestEntry(image_path, mask_path, split or None, invert))
    return entries


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    path = Path(path)
    root = path.parent
    with_invert = any(e.invert for e in entries)

    def rel(p):
        if p is None:
            return ""
        p = Path(p)
        try:
            return p.relative_to(root).as_posix()
        except ValueError:
            return p.as_posix()

    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER + (("invert",) if with_invert else ()))
        for e in entries:
            row = [rel(e.image_path), rel(e.mask_path), e.split or ""]
            if with_invert:
                row.append("1" if e.invert else "0")
            w.writerow(row)


def split_counts(n: int, ratios=DEFAULT_RATIOS) -> tuple[int, int, int]:
    """floor/floor/remainder partition sizes."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n_train = math.floor(n * ratios[0])
    n_val = math.floor(n * ratios[1])
    return n_train, n_val, n - n_train - n_val


def make_splits(entries: Sequence[ManifestEntry], ratios=DEFAULT_RATIOS, seed: int = 0) -> list[ManifestEntry]:
    """Seeded shuffle, then train/val/test by ratio. Returned in the input order."""
    n_train, n_val, _ = split_counts(len(entries), ratios)
    order = np.random.default_rng(seed).permutation(len(entries))
    labels = [None] * len(entries)
    for rank, idx in enumerate(order):
        labels[idx] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    return [dataclasses.replace(e, split=s) for e, s in zip(entries, labels)]


def select_split(entries: Sequence[ManifestEntry], split: str) -> list[ManifestEntry]:
    return [e for e in entries if e.split == split]


# -------------------------------------------------------------- augmentation

def adjust_brightness_contrast(img: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    """``contrast * (v - 128) + 128 + brightness``, rounded and clamped to [0, 255]."""
    v = contrast * (img.astype(np.float64) - 128.0) + 128.0 + brightness
    return np.clip(np.rint(v), 0, 255).astype(np.uint8)


def augment(img: np.ndarray, mask: Optional[np.ndarray], spec: AugmentSpec, sample_index: int):
    """Resize, random flips, then brightness/contrast jitter (image only).

    The random stream is keyed by ``(spec.seed, sample_index)`` so results do
    not depend on processing order.
    """
    rng = np.random.default_rng([spec.seed, sample_index])
    u_h, u_v = rng.random(2)
    brightness = rng.uniform(-spec.brightness_delta, spec.brightness_delta)
    contrast = rng.uniform(*spec.contrast_range)
    if spec.resize_to is not None:
        w, h = spec.resize_to
        img = resize_bilinear(img, w, h)
        if mask is not None:
            mask = resize_nearest(mask, w, h)
    if u_h < spec.hflip_p:
        img = img[:, ::-1]
        mask = None if mask is None else mask[:, ::-1]
    if u_v < spec.vflip_p:
        img = img[::-1, :]
        mask = None if mask is None else mask[::-1, :]
    if spec.brightness_delta > 0 or spec.contrast_range != (1.0, 1.0):
        img = adjust_brightness_contrast(img, brightness, contrast)
    img = np.ascontiguousarray(img)
    mask = None if mask is None else np.ascontiguousarray(mask)
    return img, mask


# ----------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class BlobStyle:
    """Generator knobs. Semi-axes are fractions of the shorter image side."""

    n_blobs: tuple[int, int] = (1, 4)
    axis_frac: tuple[float, float] = (1 / 16, 1 / 5)
    background: tuple[float, float] = (70.0, 10.0)
    foreground: tuple[float, float] = (180.0, 10.0)
    noise_std: float = 8.0


DEFAULT_STYLE = BlobStyle()
# About 5% foreground on average: one blob, semi-axes 10-15% of the side.
SPARSE_STYLE = BlobStyle(n_blobs=(1, 1), axis_frac=(0.10, 0.15))


def synth_blob(w: int, h: int, seed: int, index: int, style: BlobStyle = DEFAULT_STYLE):
    """One (image, mask) pair, reproducible from ``(seed, index)``."""
    if w < 16 or h < 16:
        raise ValueError("synthetic images must be at least 16x16")
    rng = np.random.default_rng([seed, index])
    side = min(w, h)
    bg = rng.normal(*style.background)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    canvas = np.full((h, w), bg)
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(int(rng.integers(style.n_blobs[0], style.n_blobs[1] + 1))):
        ax, ay = rng.uniform(style.axis_frac[0] * side, style.axis_frac[1] * side, 2)
        r = max(ax, ay)
        cx = rng.uniform(r, w - 1 - r)
        cy = rng.uniform(r, h - 1 - r)
        theta = rng.uniform(0, np.pi)
        level = rng.normal(*style.foreground)
        ct, st = np.cos(theta), np.sin(theta)
        u = (xx - cx) * ct + (yy - cy) * st
        v = -(xx - cx) * st + (yy - cy) * ct
        inside = (u / ax) ** 2 + (v / ay) ** 2 <= 1.0
        canvas[inside] = level
        mask |= inside
    canvas += rng.normal(0.0, style.noise_std, size=(h, w))
    img = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)
    return img, mask.astype(np.uint8)


def synth_blobs(n_images: int, w: int, h: int, seed: int, style: BlobStyle = DEFAULT_STYLE, start: int = 0):
    return [synth_blob(w, h, seed, start + i, style) for i in range(n_images)]


def materialize_synthetic(out_dir, n_images: int, w: int, h: int, seed: int,
                          counts: Optional[tuple[int, int, int]] = None,
                          style: BlobStyle = DEFAULT_STYLE) -> list[ManifestEntry]:
    """Write ``img_%05d.png`` / ``msk_%05d.png`` pairs plus ``manifest.csv``.

    With ``counts`` the first images go to train, then val, then test;
    otherwise the 70/10/20 seeded split is used.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (img, mask) in enumerate(synth_blobs(n_images, w, h, seed, style)):
        ip = out / f"img_{i:05d}.png"
        mp = out / f"msk_{i:05d}.png"
        write_image(ip, img)
        write_mask(mp, mask)
        entries.append(ManifestEntry(ip, mp))
    if counts is not None:
        if sum(counts) != n_images:
            raise ValueError(f"split counts {counts} do not add up to {n_images}")
        labels = [s for s, c in zip(SPLITS, counts) for _ in range(c)]
        entries = [dataclasses.replace(e, split=s) for e, s in zip(entries, labels)]
    else:
        entries = make_splits(entries, DEFAULT_RATIOS, seed)
    write_manifest(out / "manifest.csv", entries)
    return entries


def load_entry(entry: ManifestEntry, size: Optional[tuple[int, int]] = None, with_mask: bool = False):
    """Gray image (and optionally its mask) resized to ``size`` = (width, height)."""
    img = read_image(entry.image_path)
    mask = None
    if with_mask:
        if entry.mask_path is None:
            raise ManifestError(f"entry has no mask: {entry.image_path}")
        mask = read_mask(entry.mask_path)
        if mask.shape != img.shape:
            raise ManifestError(f"mask {entry.mask_path} is {mask.shape}, image is {img.shape}")
    if size is not None:
        img = resize_bilinear(img, *size)
        if mask is not None:
            mask = resize_nearest(mask, *size)
    return img, mask
