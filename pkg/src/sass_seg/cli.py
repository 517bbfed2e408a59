"""Command-line front end: ``sass-seg {synth,pseudo-mask,train,eval,ablate}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import ablation
from .config import ConfigError, load_settings
from .imaging import read_image, write_mask
from .pipeline import DEFAULT_STYLE, SPARSE_STYLE, load_manifest, materialize_synthetic, select_split
from .segmenter import load_checkpoint
from .thresholding import ThresholdMethod, threshold_image
from .trainer import evaluate, metrics_row, train, write_metrics, write_run


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file with [sections]")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="dataset manifest CSV")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable")
    p.add_argument("--mode", choices=("selfsup", "supervised"))
    p.add_argument("--method", help="thresholding method for pseudo-labels")
    p.add_argument("--loss", help="loss function")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--seeds", help="comma-separated seed list")


def _settings(args):
    ov = list(args.overrides)
    flag_map = {
        "manifest": "data.manifest",
        "mode": "train.mode",
        "method": "threshold.method",
        "loss": "loss.kind",
        "epochs": "train.epochs",
        "batch_size": "train.batch_size",
        "lr": "train.lr",
        "patience": "train.patience",
        "seeds": "train.seeds",
        "seed": "train.seed",
    }
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            ov.append(f"{key}={value}")
    return load_settings(args.config, ov)


def _manifest_path(settings):
    if settings.manifest is None:
        raise ConfigError("no manifest given (use --manifest or [data] manifest = ...)")
    return settings.manifest


# ------------------------------------------------------------------ commands

def cmd_synth(args) -> int:
    seed = 0 if args.seed is None else args.seed
    style = SPARSE_STYLE if args.style == "sparse" else DEFAULT_STYLE
    counts = tuple(args.counts) if args.counts else None
    n = sum(counts) if counts else args.n
    if n is None:
        raise ConfigError("give --n or --counts")
    entries = materialize_synthetic(args.out, n, args.width, args.height, seed, counts, style)
    print(f"wrote {len(entries)} image/mask pairs and {Path(args.out) / 'manifest.csv'}")
    return 0


def cmd_pseudo_mask(args) -> int:
    method = ThresholdMethod(
        kind=args.method, t=args.t, nu=args.nu, tau=args.tau, kappa=args.kappa, omega=args.omega,
        window=args.window, c=args.c, sigma=args.sigma, invert=args.invert,
    )
    entries = load_manifest(args.manifest)
    if args.split:
        entries = select_split(entries, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for e in entries:
        img = read_image(e.image_path)
        m = method.replace(invert=method.invert != e.invert)
        res = threshold_image(img, m)
        stem = e.image_path.stem
        write_mask(out / f"{stem}_pseudo.png", res.mask)
        rows.append((e.image_path.name, method.name, "" if np.isnan(res.threshold) else repr(res.threshold)))
        if args.dump_curves and method.is_global and method.kind != "fixed":
            with (out / f"{stem}_curve.csv").open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("cut", "score"))
                w.writerows((t, repr(float(s))) for t, s in enumerate(res.score_curve))
    with (out / "thresholds.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("image", "method", "threshold"))
        w.writerows(rows)
    print(f"wrote {len(rows)} pseudo-masks to {out}")
    return 0


def cmd_train(args) -> int:
    settings = _settings(args)
    cfg = settings.train
    entries = load_manifest(_manifest_path(settings))
    params, record = train(entries, cfg)
    for split in ("val", "test"):
        subset = select_split(entries, split)
        if subset and all(e.mask_path is not None for e in subset):
            record.reports[split] = evaluate(params, subset, size=cfg.eval_resize)
    d = write_run(args.out, cfg, params, record, settings.to_text())
    print(d)
    return 0


def cmd_eval(args) -> int:
    settings = _settings(args)
    cfg = settings.train
    entries = select_split(load_manifest(_manifest_path(settings)), args.split)
    params = load_checkpoint(args.checkpoint)
    report = evaluate(params, entries, cut=args.cut, size=cfg.eval_resize)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "metrics.csv", [metrics_row(args.split, cfg.seed, cfg, report)])
    print(out / "metrics.csv")
    return 0


def cmd_ablate(args) -> int:
    settings = _settings(args)
    entries = load_manifest(_manifest_path(settings))
    values = args.values.split(",") if args.values else None
    rows = ablation.run_ablation(entries, settings.train, args.axis, values, settings.seeds,
                                 train=not args.pseudo_only)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ablation.write_rows(out / f"ablation_{args.axis}.csv", rows)
    ablation.write_rows(out / f"ablation_{args.axis}_summary.csv", ablation.summarize(rows),
                        ablation.SUMMARY_HEADER)
    print(out / f"ablation_{args.axis}.csv")
    return 0


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sass-seg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic blob dataset")
    _common(p)
    p.add_argument("--n", type=int, help="number of images (70/10/20 seeded split)")
    p.add_argument("--counts", type=int, nargs=3, metavar=("TRAIN", "VAL", "TEST"),
                   help="explicit split sizes; overrides --n")
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--style", choices=("default", "sparse"), default="default",
                   help="'sparse' gives ~5%% foreground")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pseudo-mask", help="threshold every manifest image into a pseudo-mask")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--method", default="otsu")
    p.add_argument("--t", type=float, default=127.0, help="fixed threshold")
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=None, help="GHT tau (default: image intensity std)")
    p.add_argument("--kappa", type=float, default=0.0)
    p.add_argument("--omega", type=float, default=0.5)
    p.add_argument("--window", type=int, default=11)
    p.add_argument("--c", type=float, default=2.0)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--invert", action="store_true")
    p.add_argument("--dump-curves", action="store_true", help="write <image>_curve.csv score curves")
    p.set_defaults(func=cmd_pseudo_mask)

    p = sub.add_parser("train", help="train the segmenter and write a run directory")
    _common(p)
    _config_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on one split")
    _common(p)
    _config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--cut", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="compare thresholding methods, losses, epochs or batch sizes")
    _common(p)
    _config_args(p)
    p.add_argument("--axis", required=True, choices=ablation.AXES)
    p.add_argument("--values", help="comma-separated settings (default: the standard set for the axis)")
    p.add_argument("--pseudo-only", action="store_true",
                   help="thresholds axis: only score pseudo-labels against GT, no training")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"sass-seg {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
