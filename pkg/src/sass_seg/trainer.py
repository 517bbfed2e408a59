"""Training loop (self-supervised and supervised), evaluation and multi-seed runs.

In self-supervised mode every training batch is labelled on the fly by
thresholding the augmented images themselves; ground-truth masks are never
opened. Supervised mode swaps in the (identically augmented) GT masks and is
otherwise the same code path.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .imaging import read_image, read_mask
from .losses import LossSpec, make_loss
from .metrics import EvalReport, binarize, hard_confusion, report_from_confusions
from .pipeline import AugmentSpec, ManifestEntry, ManifestError, augment, load_entry, load_manifest, select_split
from .segmenter import Adam, SegmenterParams, backward, forward, init_params, predict, save_checkpoint
from .thresholding import ThresholdMethod, generate_pseudo_mask

MODES = ("selfsup", "supervised")
THREADS_ENV = "SASS_SEG_THREADS"
METRIC_NAMES = ("iou_macro", "iou_micro", "recall", "accuracy")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "selfsup"
    threshold: ThresholdMethod = field(default_factory=ThresholdMethod)
    loss: LossSpec = field(default_factory=LossSpec)
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    patience: int = 5
    seed: int = 0
    eval_resize: tuple[int, int] = (64, 64)
    augment: AugmentSpec = field(default_factory=AugmentSpec)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        w, h = self.eval_resize
        if w < 2 or h < 2 or w % 2 or h % 2:
            raise ValueError(f"eval_resize must be even and >= 2, got {self.eval_resize}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def config_dict(cfg: TrainConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["eval_resize"] = list(cfg.eval_resize)
    d["augment"]["contrast_range"] = list(cfg.augment.contrast_range)
    d["augment"].pop("resize_to")
    d["augment"].pop("seed")
    return d


def config_hash(cfg: TrainConfig) -> str:
    """Short digest of everything except the seed."""
    d = config_dict(cfg)
    d.pop("seed")
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


@dataclass
class RunRecord:
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int
    config_hash: str
    seed: int
    reports: dict[str, EvalReport] = field(default_factory=dict)

    @property
    def epochs_run(self) -> int:
        return len(self.val_loss)


def _entries(manifest) -> list[ManifestEntry]:
    if isinstance(manifest, (str, Path)):
        return load_manifest(manifest)
    return list(manifest)


def _require_masks(entries: Sequence[ManifestEntry], what: str) -> None:
    for e in entries:
        if e.mask_path is None:
            raise ManifestError(f"{what} needs ground-truth masks; first entry without one: {e.image_path}")


def pseudo_label(img: np.ndarray, method: ThresholdMethod, invert: bool = False) -> np.ndarray:
    if invert:
        method = method.replace(invert=not method.invert)
    return generate_pseudo_mask(img, method)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _val_set(entries, cfg: TrainConfig, supervised: bool):
    xs, ys = [], []
    for e in entries:
        img, mask = load_entry(e, cfg.eval_resize, with_mask=supervised)
        xs.append(img / 255.0)
        ys.append(mask if supervised else pseudo_label(img, cfg.threshold, e.invert))
    return np.stack(xs), ys


def _mean_loss(params, x, ys, loss_fn, batch_size=32) -> float:
    p = predict(params, x, batch_size)
    return float(np.mean([loss_fn(p[i], ys[i])[0] for i in range(len(ys))]))


def train(manifest, cfg: TrainConfig) -> tuple[SegmenterParams, RunRecord]:
    """Train the micro U-Net; returns the parameters of the best validation epoch."""
    entries = _entries(manifest)
    train_e = select_split(entries, "train")
    val_e = select_split(entries, "val")
    if not train_e:
        raise ValueError("train split is empty")
    if not val_e:
        raise ValueError("val split is empty")
    supervised = cfg.mode == "supervised"
    if supervised:
        _require_masks(train_e + val_e, "supervised training")

    with threadpool_limits(limits=1):
        return _train(train_e, val_e, cfg, supervised)


def _train(train_e, val_e, cfg: TrainConfig, supervised: bool):
    images = [read_image(e.image_path) for e in train_e]
    masks = [read_mask(e.mask_path) for e in train_e] if supervised else [None] * len(train_e)
    val_x, val_y = _val_set(val_e, cfg, supervised)

    loss_fn = make_loss(cfg.loss)
    aug = cfg.augment.replace(resize_to=tuple(cfg.eval_resize), seed=cfg.seed)
    params = init_params(cfg.seed)
    opt = Adam(lr=cfg.lr)
    n = len(train_e)

    train_hist, val_hist = [], []
    best_val, best_epoch, best_params = np.inf, 0, params.copy()
    stale = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xs, ys = [], []
            for i in idx:
                img, mask = augment(images[i], masks[i], aug, epoch * n + int(i))
                xs.append(img / 255.0)
                ys.append(mask if supervised else pseudo_label(img, cfg.threshold, train_e[i].invert))
            p, cache = forward(params, np.stack(xs))
            values, grads = zip(*(loss_fn(p[j], ys[j]) for j in range(len(idx))))
            grad = _backward_mean(params, cache, grads)
            params = opt.step(params, grad)
            total += float(np.sum(values))
        train_hist.append(total / n)
        val = _mean_loss(params, val_x, val_y, loss_fn)
        val_hist.append(val)
        if val < best_val:
            best_val, best_epoch, best_params = val, epoch + 1, params.copy()
            stale = 0
        else:
            stale += 1
        if cfg.patience > 0 and stale >= cfg.patience:
            break

    record = RunRecord(train_hist, val_hist, best_epoch, config_hash(cfg), cfg.seed)
    return best_params, record


def _backward_mean(params, cache, grads):
    return backward(params, cache, np.stack(grads) / len(grads))


def evaluate(params: SegmenterParams, entries: Sequence[ManifestEntry], cut: float = 0.5,
             size: Optional[tuple[int, int]] = (64, 64)) -> EvalReport:
    """Binarize predictions at ``cut`` and score them against the GT masks."""
    entries = list(entries)
    if not entries:
        raise ValueError("nothing to evaluate: split is empty")
    _require_masks(entries, "evaluation")
    confusions = []
    with threadpool_limits(limits=1):
        for e in entries:
            img, mask = load_entry(e, size, with_mask=True)
            p = forward(params, img[None] / 255.0)[0][0]
            confusions.append(hard_confusion(binarize(p, cut), mask))
    return report_from_confusions(confusions)


def pseudo_label_quality(entries: Sequence[ManifestEntry], method: ThresholdMethod,
                         size: Optional[tuple[int, int]] = (64, 64)) -> EvalReport:
    """How well the thresholding pseudo-labels match GT (the ceiling for self-supervision)."""
    entries = list(entries)
    _require_masks(entries, "pseudo-label evaluation")
    confusions = []
    for e in entries:
        img, mask = load_entry(e, size, with_mask=True)
        confusions.append(hard_confusion(pseudo_label(img, method, e.invert), mask))
    return report_from_confusions(confusions)


# ----------------------------------------------------------------- multi-seed

@dataclass
class SeedResult:
    seed: int
    report: EvalReport
    record: RunRecord
    params: SegmenterParams


@dataclass
class MultiSeedResult:
    runs: list[SeedResult]
    mean: dict[str, float]
    std: dict[str, float]


def _run_one(entries, cfg: TrainConfig, seed: int, split: str) -> SeedResult:
    c = cfg.replace(seed=seed)
    params, record = train(entries, c)
    report = evaluate(params, select_split(entries, split), size=c.eval_resize)
    record.reports[split] = report
    return SeedResult(seed, report, record, params)


def aggregate(runs: Sequence[SeedResult]) -> tuple[dict[str, float], dict[str, float]]:
    """Mean and sample std (ddof=1; 0 for one run), summed in seed order."""
    runs = sorted(runs, key=lambda r: r.seed)
    mean, std = {}, {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(r.report, name) for r in runs])
        mean[name] = float(vals.mean())
        std[name] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return mean, std


def multi_seed_run(manifest, cfg: TrainConfig, seeds: Sequence[int], split: str = "test",
                   workers: Optional[int] = None) -> MultiSeedResult:
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    entries = _entries(manifest)
    _require_masks(select_split(entries, split), "evaluation")
    workers = _threads() if workers is None else workers
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            futures = [pool.submit(_run_one, entries, cfg, s, split) for s in seeds]
            runs = [f.result() for f in futures]
    else:
        runs = [_run_one(entries, cfg, s, split) for s in seeds]
    mean, std = aggregate(runs)
    return MultiSeedResult(runs, mean, std)


# --------------------------------------------------------------- run outputs

METRICS_HEADER = ("split", "seed", "method", "loss", "iou", "iou_micro", "iou_macro",
                  "recall", "accuracy", "collapse")


def metrics_row(split: str, seed, cfg: TrainConfig, report: EvalReport) -> list:
    return [split, seed, cfg.threshold.name if cfg.mode == "selfsup" else "GT", cfg.loss.kind,
            repr(report.iou_macro), repr(report.iou_micro), repr(report.iou_macro),
            repr(report.recall), repr(report.accuracy), str(report.collapse)]


def write_metrics(path, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        w.writerows(rows)


def write_history(path, record: RunRecord) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "train_loss", "val_loss"))
        for i, (t, v) in enumerate(zip(record.train_loss, record.val_loss), start=1):
            w.writerow((i, repr(t), repr(v)))


def run_dir(out, cfg: TrainConfig) -> Path:
    return Path(out) / "runs" / config_hash(cfg) / str(cfg.seed)


def write_run(out, cfg: TrainConfig, params: SegmenterParams, record: RunRecord,
              resolved_config: Optional[str] = None) -> Path:
    """Materialize ``runs/<hash>/<seed>/`` with history, metrics, checkpoint and meta."""
    d = run_dir(out, cfg)
    d.mkdir(parents=True, exist_ok=True)
    write_history(d / "history.csv", record)
    write_metrics(d / "metrics.csv",
                  [metrics_row(s, cfg.seed, cfg, r) for s, r in sorted(record.reports.items())])
    save_checkpoint(d / "params.bin", params,
                    {"seed": cfg.seed, "config_hash": record.config_hash, "epoch": record.best_epoch})
    meta = [
        f"created = {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}",
        f"config_hash = {record.config_hash}",
        f"seed = {cfg.seed}",
        f"best_epoch = {record.best_epoch}",
        f"epochs_run = {record.epochs_run}",
        "",
        resolved_config if resolved_config is not None else json.dumps(config_dict(cfg), indent=2, sort_keys=True),
    ]
    (d / "meta.txt").write_text("\n".join(meta) + "\n")
    return d
