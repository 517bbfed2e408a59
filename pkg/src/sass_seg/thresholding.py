"""Global and local binarization used to produce pseudo-labels.

Global methods search the 255 cuts ``t = 0..254`` of a 256-bin histogram,
where class 0 holds intensities ``<= t`` and class 1 the rest. When several
cuts reach the optimum the reported threshold is their arithmetic mean;
masks always use a strict ``pixel > threshold`` comparison.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .imaging import N_BINS, as_gray, compute_histogram

N_CUTS = N_BINS - 1
FLOOR = 1e-30

GLOBAL_KINDS = ("fixed", "otsu", "met", "ght")
LOCAL_KINDS = ("adaptive_mean", "adaptive_gaussian")

# Short names used in reports.
DISPLAY_NAMES = {
    "fixed": "Fixed",
    "otsu": "Otsu",
    "met": "MET",
    "ght": "GHT",
    "adaptive_mean": "AMT",
    "adaptive_gaussian": "AGT",
}
_ALIASES = {v.lower(): k for k, v in DISPLAY_NAMES.items()}


@dataclass(frozen=True)
class ThresholdMethod:
    """A binarization recipe.

    ``tau=None`` for GHT means "use the intensity standard deviation of each
    image"; ``sigma=None`` for the Gaussian window means ``window / 6``.
    """

    kind: str = "otsu"
    t: float = 127.0
    nu: float = 1.0
    tau: Optional[float] = None
    kappa: float = 0.0
    omega: float = 0.5
    window: int = 11
    c: float = 2.0
    sigma: Optional[float] = None
    invert: bool = False

    def __post_init__(self):
        kind = _ALIASES.get(self.kind.lower(), self.kind.lower())
        object.__setattr__(self, "kind", kind)
        if kind not in GLOBAL_KINDS + LOCAL_KINDS:
            raise ValueError(f"unknown threshold method {self.kind!r}")
        if kind == "ght":
            _check_ght_params(self.nu, 0.0 if self.tau is None else self.tau, self.kappa, self.omega)
        if kind in LOCAL_KINDS:
            _check_window(self.window)
            if kind == "adaptive_gaussian" and self.sigma is not None and self.sigma <= 0:
                raise ValueError("sigma must be > 0")

    @property
    def is_global(self) -> bool:
        return self.kind in GLOBAL_KINDS

    @property
    def name(self) -> str:
        return DISPLAY_NAMES[self.kind]

    def replace(self, **changes) -> "ThresholdMethod":
        return dataclasses.replace(self, **changes)


@dataclass
class ThresholdResult:
    threshold: float
    score_curve: np.ndarray
    mask: Optional[np.ndarray] = None

    @property
    def argmax_set(self) -> np.ndarray:
        return optimal_cuts(self.score_curve)


def _check_window(window: int) -> None:
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")


def _check_ght_params(nu, tau, kappa, omega) -> None:
    if nu < 0 or tau < 0 or kappa < 0:
        raise ValueError("GHT requires nu, tau, kappa >= 0")
    if not 0.0 <= omega <= 1.0:
        raise ValueError("GHT requires omega in [0, 1]")


def _as_hist(h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (N_BINS,):
        raise ValueError(f"histogram must have {N_BINS} bins, got shape {h.shape}")
    if np.any(h < 0):
        raise ValueError("histogram counts must be non-negative")
    if h.sum() <= 0:
        raise ValueError("empty histogram")
    return h


def optimal_cuts(score: np.ndarray) -> np.ndarray:
    score = np.asarray(score)
    return np.flatnonzero(score == score.max())


def _mean_cut(score: np.ndarray) -> float:
    return float(optimal_cuts(score).mean())


def otsu_scores(h) -> np.ndarray:
    """Between-class variance w0*w1*(mu0-mu1)^2 for every cut (0 where a class is empty)."""
    h = _as_hist(h)
    x = np.arange(N_BINS, dtype=np.float64)
    total = h.sum()
    w0 = np.cumsum(h)[:N_CUTS]
    s0 = np.cumsum(h * x)[:N_CUTS]
    w1 = total - w0
    s1 = np.sum(h * x) - s0
    score = np.zeros(N_CUTS)
    ok = (w0 > 0) & (w1 > 0)
    om0 = w0[ok] / total
    om1 = w1[ok] / total
    mu0 = s0[ok] / w0[ok]
    mu1 = s1[ok] / w1[ok]
    score[ok] = om0 * om1 * (mu0 - mu1) ** 2
    return score


def otsu_threshold(h) -> ThresholdResult:
    score = otsu_scores(h)
    return ThresholdResult(_mean_cut(score), score)


def ght_scores(h, nu: float, tau: float, kappa: float, omega: float) -> np.ndarray:
    _check_ght_params(nu, tau, kappa, omega)
    h = _as_hist(h)
    x = np.arange(N_BINS, dtype=np.float64)
    cw = np.cumsum(h)
    cx = np.cumsum(h * x)
    cx2 = np.cumsum(h * x * x)
    w0 = np.maximum(FLOOR, cw[:N_CUTS])
    w1 = np.maximum(FLOOR, cw[-1] - cw[:N_CUTS])
    p0 = w0 / (w0 + w1)
    p1 = w1 / (w0 + w1)
    mu0 = cx[:N_CUTS] / w0
    mu1 = (cx[-1] - cx[:N_CUTS]) / w1
    d0 = cx2[:N_CUTS] - w0 * mu0 ** 2
    d1 = (cx2[-1] - cx2[:N_CUTS]) - w1 * mu1 ** 2
    v0 = np.maximum(FLOOR, (p0 * nu * tau ** 2 + d0) / (p0 * nu + w0))
    v1 = np.maximum(FLOOR, (p1 * nu * tau ** 2 + d1) / (p1 * nu + w1))
    f0 = -d0 / v0 - w0 * np.log(v0) + 2 * (w0 + kappa * omega) * np.log(w0)
    f1 = -d1 / v1 - w1 * np.log(v1) + 2 * (w1 + kappa * (1 - omega)) * np.log(w1)
    return f0 + f1


def ght_threshold(h, nu: float, tau: float, kappa: float, omega: float) -> ThresholdResult:
    """Generalized histogram thresholding.

    ``nu = kappa = 0`` recovers minimum-error thresholding; ``nu -> inf``
    pins the class variances to ``tau**2`` and approaches Otsu.
    """
    score = ght_scores(h, nu, tau, kappa, omega)
    return ThresholdResult(_mean_cut(score), score)


def met_threshold(h, tau: float = 0.0) -> ThresholdResult:
    """Minimum-error thresholding (GHT with nu = kappa = 0; tau has no effect)."""
    return ght_threshold(h, 0.0, tau, 0.0, 0.5)


def histogram_std(h) -> float:
    h = _as_hist(h)
    x = np.arange(N_BINS, dtype=np.float64)
    mean = np.sum(h * x) / h.sum()
    return float(np.sqrt(np.sum(h * (x - mean) ** 2) / h.sum()))


def _window_offsets(window: int):
    r = window // 2
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]


def gaussian_window(window: int, sigma: float) -> np.ndarray:
    """Normalized 2-D Gaussian weights over a ``window x window`` grid."""
    r = window // 2
    d = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def local_threshold_map(img, kind: str, window: int, sigma: Optional[float] = None,
                        c: float = 0.0) -> np.ndarray:
    """Per-pixel threshold (local mean or Gaussian mean minus ``c``) with edge-replicate padding.

    Offsets are accumulated in row-major order so a per-pixel loop in the same
    order reproduces the result bit for bit.
    """
    img = as_gray(img)
    _check_window(window)
    r = window // 2
    h, w = img.shape
    if kind == "mean":
        padded = np.pad(img.astype(np.int64), r, mode="edge")
        acc = np.zeros((h, w), dtype=np.int64)
        for dy, dx in _window_offsets(window):
            acc += padded[r + dy:r + dy + h, r + dx:r + dx + w]
        return acc / float(window * window) - c
    if kind == "gaussian":
        if sigma is None:
            sigma = window / 6.0
        if sigma <= 0:
            raise ValueError("sigma must be > 0")
        weights = gaussian_window(window, sigma)
        padded = np.pad(img.astype(np.float64), r, mode="edge")
        acc = np.zeros((h, w))
        for dy, dx in _window_offsets(window):
            acc += weights[dy + r, dx + r] * padded[r + dy:r + dy + h, r + dx:r + dx + w]
        return acc - c
    raise ValueError(f"unknown adaptive kind {kind!r}")


def adaptive_threshold(img, kind: str = "mean", window: int = 11, sigma: Optional[float] = None,
                       c: float = 2.0) -> np.ndarray:
    img = as_gray(img)
    return (img > local_threshold_map(img, kind, window, sigma, c)).astype(np.uint8)


def global_threshold(img, method: ThresholdMethod) -> ThresholdResult:
    """Threshold (and score curve) of a global method for one image."""
    if method.kind == "fixed":
        return ThresholdResult(float(method.t), np.zeros(N_CUTS))
    hist = compute_histogram(img)
    if method.kind == "otsu":
        return otsu_threshold(hist)
    if method.kind == "met":
        return met_threshold(hist)
    if method.kind == "ght":
        tau = histogram_std(hist) if method.tau is None else method.tau
        return ght_threshold(hist, method.nu, tau, method.kappa, method.omega)
    raise ValueError(f"{method.kind} is not a global method")


def threshold_image(img, method: ThresholdMethod) -> ThresholdResult:
    """Binarize ``img``; the result carries the mask and, for global methods, threshold and curve."""
    img = as_gray(img)
    if method.is_global:
        res = global_threshold(img, method)
        mask = (img > res.threshold).astype(np.uint8)
    else:
        kind = "mean" if method.kind == "adaptive_mean" else "gaussian"
        mask = adaptive_threshold(img, kind, method.window, method.sigma, method.c)
        res = ThresholdResult(float("nan"), np.full(N_CUTS, np.nan))
    if method.invert:
        mask = 1 - mask
    res.mask = mask
    return res


def generate_pseudo_mask(img, method: ThresholdMethod) -> np.ndarray:
    return threshold_image(img, method).mask
