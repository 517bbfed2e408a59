"""Hard-mask evaluation: IoU, recall, accuracy and the collapse diagnostic."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

DEFAULT_CUT = 0.5
BACKGROUND_IOU_MAX = 0.01
BACKGROUND_ACC_FACTOR = 0.9
FOREGROUND_TOL = 0.01


class Collapse(str, enum.Enum):
    NONE = "None"
    BACKGROUND = "BackgroundCollapse"
    FOREGROUND = "ForegroundCollapse"

    def __str__(self) -> str:
        return self.value


class HardConfusion(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def fg_fraction(self) -> float:
        """Foreground share of the target."""
        return (self.tp + self.fn) / self.n

    def __add__(self, other):
        return HardConfusion(*(a + b for a, b in zip(self, other)))


@dataclass(frozen=True)
class EvalReport:
    iou_macro: float
    iou_micro: float
    recall: float
    accuracy: float
    collapse: Collapse
    fg_fraction: float
    n_images: int
    confusion: HardConfusion

    @property
    def iou(self) -> float:
        return self.iou_macro


def _pair(pred, target):
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"dimension mismatch: prediction {pred.shape} vs target {target.shape}")
    return pred > 0, target > 0


def binarize(p, cut: float = DEFAULT_CUT) -> np.ndarray:
    if not 0.0 < cut < 1.0:
        raise ValueError("cut must lie in (0, 1)")
    return (np.asarray(p) > cut).astype(np.uint8)


def hard_confusion(pred, target) -> HardConfusion:
    pred, target = _pair(pred, target)
    tp = int(np.count_nonzero(pred & target))
    fp = int(np.count_nonzero(pred & ~target))
    fn = int(np.count_nonzero(~pred & target))
    tn = int(pred.size - tp - fp - fn)
    return HardConfusion(tp, fp, fn, tn)


def iou_from_confusion(conf: HardConfusion) -> float:
    union = conf.tp + conf.fp + conf.fn
    # Both masks empty: vacuous perfect agreement.
    return 1.0 if union == 0 else conf.tp / union


def iou(pred, target) -> float:
    return iou_from_confusion(hard_confusion(pred, target))


def recall_accuracy(conf: HardConfusion) -> tuple[float, float]:
    if conf.n <= 0:
        raise ValueError("empty confusion")
    pos = conf.tp + conf.fn
    recall = 1.0 if pos == 0 else conf.tp / pos
    return recall, (conf.tp + conf.tn) / conf.n


def collapse_diagnose(iou_value: float, accuracy: float, fg_fraction: float) -> Collapse:
    """Flag single-class predictors from pooled IoU/accuracy.

    Background collapse: IoU is ~0 while accuracy is close to the background
    share. Foreground collapse: IoU and accuracy both sit at the foreground share,
    which is what predicting foreground everywhere produces.
    """
    for name, v in (("iou", iou_value), ("accuracy", accuracy), ("fg_fraction", fg_fraction)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    if iou_value < BACKGROUND_IOU_MAX and accuracy >= BACKGROUND_ACC_FACTOR * (1 - fg_fraction):
        return Collapse.BACKGROUND
    if abs(accuracy - fg_fraction) <= FOREGROUND_TOL and abs(iou_value - fg_fraction) <= FOREGROUND_TOL:
        return Collapse.FOREGROUND
    return Collapse.NONE


def report_from_confusions(confusions: Iterable[HardConfusion]) -> EvalReport:
    """Macro IoU averages per-image IoU; every other field uses the pooled confusion."""
    confusions = list(confusions)
    if not confusions:
        raise ValueError("no images to evaluate")
    pooled = HardConfusion(0, 0, 0, 0)
    for c in confusions:
        pooled = pooled + c
    macro = float(np.mean([iou_from_confusion(c) for c in confusions]))
    micro = iou_from_confusion(pooled)
    recall, accuracy = recall_accuracy(pooled)
    fg = pooled.fg_fraction
    return EvalReport(
        iou_macro=macro,
        iou_micro=micro,
        recall=recall,
        accuracy=accuracy,
        collapse=collapse_diagnose(micro, accuracy, fg),
        fg_fraction=fg,
        n_images=len(confusions),
        confusion=pooled,
    )


def evaluate_masks(preds, targets) -> EvalReport:
    return report_from_confusions(hard_confusion(p, t) for p, t in zip(preds, targets, strict=True))
