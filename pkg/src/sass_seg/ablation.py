"""Component ablations: thresholding method, loss, epoch budget and batch size.

Every setting is trained for each seed and scored on the test split. The
thresholding axis additionally reports the raw pseudo-label quality of each
method against ground truth (``stage = pseudo``).
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .losses import LOSS_KINDS, LossSpec
from .metrics import EvalReport
from .pipeline import select_split
from .thresholding import ThresholdMethod
from .trainer import TrainConfig, multi_seed_run, pseudo_label_quality

AXES = ("thresholds", "losses", "epochs", "batch")
DEFAULT_VALUES = {
    "thresholds": ("adaptive_mean", "adaptive_gaussian", "ght", "otsu", "met"),
    "losses": LOSS_KINDS,
    "epochs": (10, 20, 50, 70),
    "batch": (8, 16, 32),
}
HEADER = ("axis", "setting", "stage", "seed", "method", "loss", "epochs", "batch_size",
          "iou_macro", "iou_micro", "recall", "accuracy", "collapse")
SUMMARY_HEADER = ("axis", "setting", "stage", "metric", "mean", "std", "n")
_METRICS = ("iou_macro", "iou_micro", "recall", "accuracy")


def _variant(cfg: TrainConfig, axis: str, value) -> TrainConfig:
    if axis == "thresholds":
        return cfg.replace(threshold=ThresholdMethod(kind=str(value), invert=cfg.threshold.invert))
    if axis == "losses":
        return cfg.replace(loss=LossSpec(kind=str(value)))
    if axis == "epochs":
        return cfg.replace(epochs=int(value))
    if axis == "batch":
        return cfg.replace(batch_size=int(value))
    raise ValueError(f"unknown ablation axis {axis!r}; choose from {', '.join(AXES)}")


def _row(axis, setting, stage, seed, cfg: TrainConfig, report: EvalReport):
    return {
        "axis": axis,
        "setting": str(setting),
        "stage": stage,
        "seed": "" if seed is None else seed,
        "method": cfg.threshold.name,
        "loss": cfg.loss.kind if stage == "trained" else "",
        "epochs": cfg.epochs if stage == "trained" else "",
        "batch_size": cfg.batch_size if stage == "trained" else "",
        "iou_macro": report.iou_macro,
        "iou_micro": report.iou_micro,
        "recall": report.recall,
        "accuracy": report.accuracy,
        "collapse": str(report.collapse),
    }


def run_ablation(entries, cfg: TrainConfig, axis: str, values: Optional[Sequence] = None,
                 seeds: Sequence[int] = (1, 2, 3, 4, 5), train: bool = True,
                 workers: Optional[int] = None) -> list[dict]:
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; choose from {', '.join(AXES)}")
    values = list(DEFAULT_VALUES[axis] if values is None else values)
    entries = list(entries)
    rows = []
    for value in values:
        c = _variant(cfg, axis, value)
        if axis == "thresholds":
            q = pseudo_label_quality(select_split(entries, "test"), c.threshold, c.eval_resize)
            rows.append(_row(axis, c.threshold.name, "pseudo", None, c, q))
        if train:
            res = multi_seed_run(entries, c, seeds, "test", workers)
            setting = c.threshold.name if axis == "thresholds" else value
            for run in sorted(res.runs, key=lambda r: r.seed):
                rows.append(_row(axis, setting, "trained", run.seed, c, run.report))
    return rows


def summarize(rows: Sequence[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["axis"], r["setting"], r["stage"]), []).append(r)
    out = []
    for (axis, setting, stage), members in groups.items():
        for m in _METRICS:
            vals = np.array([float(r[m]) for r in members])
            std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
            out.append({"axis": axis, "setting": setting, "stage": stage, "metric": m,
                        "mean": float(vals.mean()), "std": std, "n": len(vals)})
    return out


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def write_rows(path, rows: Sequence[dict], header=HEADER) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in header])
