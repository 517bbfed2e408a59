"""Segmentation losses on per-pixel foreground probabilities.

Each loss takes a probability map ``p`` and a hard target ``y`` of the same
shape and returns ``(value, grad)`` where ``grad`` is d value / d p.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

PROB_CLAMP = 1e-7

LOSS_KINDS = ("bce", "focal", "dice", "tversky", "focal_tversky")

_DEFAULTS = {
    "bce": {},
    "focal": {"alpha": 0.25, "gamma": 2.0},
    "dice": {"eps": 1e-6},
    "tversky": {"alpha": 0.7, "beta": 0.3, "eps": 1e-6},
    "focal_tversky": {"alpha": 0.7, "beta": 0.3, "gamma": 0.75, "eps": 1e-6},
}


class SoftConfusion(NamedTuple):
    tp: float
    fp: float
    fn: float
    tn: float


@dataclass(frozen=True)
class LossSpec:
    """Loss choice plus hyperparameters; ``None`` fields take the per-kind default.

    For focal loss ``alpha`` weights the foreground class and ``gamma`` is the
    focusing exponent. For (focal-)tversky ``alpha`` weights false negatives,
    ``beta`` false positives and ``gamma`` is the outer exponent.
    """

    kind: str = "focal_tversky"
    alpha: Optional[float] = None
    beta: Optional[float] = None
    gamma: Optional[float] = None
    eps: Optional[float] = None

    def __post_init__(self):
        kind = self.kind.lower().replace("-", "_")
        if kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.kind!r}; choose from {', '.join(LOSS_KINDS)}")
        object.__setattr__(self, "kind", kind)
        for name, value in _DEFAULTS[kind].items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, value)
        if kind == "focal":
            if not 0.0 <= self.alpha <= 1.0:
                raise ValueError("focal alpha must be in [0, 1]")
            if self.gamma < 0:
                raise ValueError("focal gamma must be >= 0")
        if kind in ("tversky", "focal_tversky") and (self.alpha < 0 or self.beta < 0):
            raise ValueError("tversky alpha and beta must be >= 0")
        if kind == "focal_tversky" and self.gamma <= 0:
            raise ValueError("focal-tversky exponent must be > 0")
        if self.eps is not None and self.eps <= 0:
            raise ValueError("eps must be > 0")

    def replace(self, **changes) -> "LossSpec":
        return dataclasses.replace(self, **changes)

    def params(self) -> dict:
        return {k: getattr(self, k) for k in _DEFAULTS[self.kind]}


def _pair(p, y):
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"dimension mismatch: prediction {p.shape} vs target {y.shape}")
    return p, y


def soft_confusion(p, y) -> SoftConfusion:
    p, y = _pair(p, y)
    return SoftConfusion(
        float(np.sum(p * y)),
        float(np.sum(p * (1 - y))),
        float(np.sum((1 - p) * y)),
        float(np.sum((1 - p) * (1 - y))),
    )


def _clamped(p):
    pc = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
    active = (p >= PROB_CLAMP) & (p <= 1 - PROB_CLAMP)
    return pc, active


def bce_loss(p, y):
    p, y = _pair(p, y)
    n = p.size
    pc, active = _clamped(p)
    value = -np.sum(y * np.log(pc) + (1 - y) * np.log(1 - pc)) / n
    grad = np.where(active, -(y / pc - (1 - y) / (1 - pc)) / n, 0.0)
    return float(value), grad


def focal_loss(p, y, alpha: float = 0.25, gamma: float = 2.0):
    p, y = _pair(p, y)
    n = p.size
    pc, active = _clamped(p)
    pos = y > 0.5
    pt = np.where(pos, pc, 1 - pc)
    at = np.where(pos, alpha, 1 - alpha)
    q = 1 - pt
    logpt = np.log(pt)
    value = np.sum(-at * q ** gamma * logpt) / n
    if gamma == 0:
        dpt = -1.0 / pt
    else:
        dpt = gamma * q ** (gamma - 1) * logpt - q ** gamma / pt
    grad = np.where(active, at * dpt * np.where(pos, 1.0, -1.0) / n, 0.0)
    return float(value), grad


def _tversky_index(p, y, alpha, beta, eps):
    tp, fp, fn, _ = soft_confusion(p, y)
    num = tp + eps
    den = tp + alpha * fn + beta * fp + eps
    ti = num / den
    # d tp/dp = y, d fp/dp = 1 - y, d fn/dp = -y
    dden = y - alpha * y + beta * (1 - y)
    dti = (y * den - num * dden) / den ** 2
    return ti, dti


def tversky_loss(p, y, alpha: float = 0.7, beta: float = 0.3, eps: float = 1e-6):
    p, y = _pair(p, y)
    ti, dti = _tversky_index(p, y, alpha, beta, eps)
    return float(1 - ti), -dti


def dice_loss(p, y, eps: float = 1e-6):
    p, y = _pair(p, y)
    tp, fp, fn, _ = soft_confusion(p, y)
    num = 2 * tp + eps
    den = 2 * tp + fp + fn + eps
    # d den/dp = 2y + (1 - y) - y = 1
    grad = -(2 * y * den - num) / den ** 2
    return float(1 - num / den), grad


def focal_tversky_loss(p, y, alpha: float = 0.7, beta: float = 0.3, gamma: float = 0.75,
                       eps: float = 1e-6):
    if gamma <= 0:
        raise ValueError("focal-tversky exponent must be > 0")
    p, y = _pair(p, y)
    ti, dti = _tversky_index(p, y, alpha, beta, eps)
    base = max(1.0 - ti, 0.0)
    if base == 0.0:
        return 0.0, np.zeros_like(p)
    return float(base ** gamma), -gamma * base ** (gamma - 1) * dti


def make_loss(spec: LossSpec) -> Callable:
    """Bind a LossSpec to a ``loss(p, y) -> (value, grad)`` callable."""
    fn = {
        "bce": bce_loss,
        "focal": focal_loss,
        "dice": dice_loss,
        "tversky": tversky_loss,
        "focal_tversky": focal_tversky_loss,
    }[spec.kind]
    kwargs = spec.params()

    def loss(p, y):
        return fn(p, y, **kwargs)

    loss.__name__ = spec.kind
    return loss
