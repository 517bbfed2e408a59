"""Acceptance checks, one test per criterion.

The training criteria share a 200/40/60 synthetic set (64x64, seed 7) and a
handful of 20-epoch runs cached per session; expect the module to take a few
minutes single-threaded.
"""

import dataclasses
import itertools
import time

import numpy as np
import pytest

from oracles import (argmax_set, central_difference, met_argmin_set, otsu_bruteforce, random_histograms,
                     rel_err)
from sass_seg.ablation import HEADER, run_ablation, write_rows
from sass_seg.imaging import read_image, resize_bilinear, write_mask
from sass_seg.losses import (LOSS_KINDS, PROB_CLAMP, LossSpec, bce_loss, dice_loss, focal_loss,
                             focal_tversky_loss, make_loss, tversky_loss)
from sass_seg.metrics import Collapse, collapse_diagnose, evaluate_masks
from sass_seg.pipeline import SPARSE_STYLE, load_entry, materialize_synthetic, select_split, synth_blob
from sass_seg.segmenter import N_PARAMS, SegmenterParams, backward, forward, init_params
from sass_seg.thresholding import ThresholdMethod, generate_pseudo_mask, ght_threshold, otsu_threshold
from sass_seg.trainer import (TrainConfig, aggregate, evaluate, multi_seed_run, pseudo_label,
                              pseudo_label_quality, train, write_run)

DESK = TrainConfig(threshold=ThresholdMethod("otsu"), loss=LossSpec("focal_tversky"), epochs=20,
                   batch_size=8, seed=0)


@pytest.fixture(scope="session")
def desk_data(tmp_path_factory):
    t0 = time.perf_counter()
    entries = materialize_synthetic(tmp_path_factory.mktemp("desk"), 300, 64, 64, 7, counts=(200, 40, 60))
    return entries, time.perf_counter() - t0


@pytest.fixture(scope="session")
def desk_runs(desk_data):
    entries, _ = desk_data
    test = select_split(entries, "test")
    cache = {}

    def run(loss, key=None):
        key = key or loss
        if key not in cache:
            t0 = time.perf_counter()
            cfg = DESK.replace(loss=LossSpec(loss))
            params, record = train(entries, cfg)
            record.reports["test"] = evaluate(params, test, size=cfg.eval_resize)
            cache[key] = (cfg, params, record, time.perf_counter() - t0)
        return cache[key]

    return run


def test_criterion_1_otsu_oracle(verdict):
    hists = random_histograms(1000, 2024)
    t0 = time.perf_counter()
    ours = [set(otsu_threshold(h).argmax_set.tolist()) for h in hists]
    elapsed = time.perf_counter() - t0
    mismatches = sum(a != argmax_set(otsu_bruteforce(h)) for a, h in zip(ours, hists))
    ok = mismatches == 0 and elapsed < 2.0
    verdict(1, ok, f"{mismatches}/1000 argmax-set mismatches, {elapsed:.3f} s")
    assert ok


def test_criterion_2_ght_limits(verdict):
    hists = random_histograms(100, 2025)
    met_bad = sum(set(ght_threshold(h, 0.0, 1.0, 0.0, 0.5).argmax_set.tolist()) != met_argmin_set(h)
                  for h in hists)
    otsu_bad = sum(set(ght_threshold(h, 1e9, 1.0, 0.0, 0.5).argmax_set.tolist())
                   != set(otsu_threshold(h).argmax_set.tolist()) for h in hists)
    ok = met_bad == 0 and otsu_bad == 0
    verdict(2, ok, f"nu=0 vs minimum-error oracle: {met_bad}/100 mismatches; "
                   f"nu=1e9,tau=1 vs Otsu: {otsu_bad}/100 mismatches")
    assert met_bad == 0, "GHT(nu=0, kappa=0) differs from minimum-error thresholding"
    assert otsu_bad == 0, "GHT(nu=1e9, tau=1, kappa=0) differs from Otsu"


def _loss_pairs(n, seed):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        # probabilities as a network would emit them: sigmoid of unit-normal logits
        p = 1.0 / (1.0 + np.exp(-rng.standard_normal((16, 16))))
        y = (rng.random((16, 16)) < 0.5).astype(float)
        yield p, y


def test_criterion_3_loss_gradients(verdict):
    step = 1e-4
    worst = {}
    for kind in LOSS_KINDS:
        fn = make_loss(LossSpec(kind))
        err = 0.0
        for p, y in _loss_pairs(50, 3):
            _, g = fn(p, y)
            fd = central_difference(lambda q: fn(q, y)[0], p, step)
            free = (p - step > PROB_CLAMP) & (p + step < 1 - PROB_CLAMP)
            err = max(err, rel_err(g[free], fd[free], floor=1e-300).max())
        worst[kind] = err
    p, y = next(_loss_pairs(1, 4))
    ident = {
        "tversky(.5,.5)=dice": abs(tversky_loss(p, y, 0.5, 0.5, eps=1e-6)[0] - dice_loss(p, y, eps=2e-6)[0]),
        "FTL(g=1)=tversky": abs(focal_tversky_loss(p, y, 0.7, 0.3, 1.0)[0] - tversky_loss(p, y, 0.7, 0.3)[0]),
        "focal(g=0,a=.5)=bce/2": abs(focal_loss(p, y, 0.5, 0.0)[0] - 0.5 * bce_loss(p, y)[0]),
    }
    ok = max(worst.values()) <= 1e-5 and max(ident.values()) <= 1e-12
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(3, ok, f"max rel err {detail}; identity gaps max {max(ident.values()):.1e}")
    assert ok, (worst, ident)


def test_criterion_4_segmenter_gradient(verdict):
    img, _ = synth_blob(16, 16, 0, 1)
    img = resize_bilinear(img, 8, 8)
    y = generate_pseudo_mask(img, ThresholdMethod()).astype(float)
    x = img[None] / 255.0
    params = init_params(0)

    def loss(flat):
        return focal_tversky_loss(forward(SegmenterParams(flat), x)[0][0], y)[0]

    t0 = time.perf_counter()
    p, cache = forward(params, x)
    g = backward(params, cache, focal_tversky_loss(p[0], y)[1])
    fd = central_difference(loss, params.flat, 1e-5)
    elapsed = time.perf_counter() - t0
    err = rel_err(g, fd, floor=1e-300).max()
    ok = g.size == N_PARAMS == 2993 and err <= 1e-4 and elapsed < 60
    verdict(4, ok, f"{N_PARAMS} params, max rel err {err:.2e}, {elapsed:.1f} s")
    assert ok


def test_criterion_5_end_to_end(desk_data, desk_runs, tmp_path, verdict):
    entries, synth_time = desk_data
    cfg, params, record, train_time = desk_runs("focal_tversky")
    test = select_split(entries, "test")
    t0 = time.perf_counter()
    ceiling = pseudo_label_quality(test, cfg.threshold, cfg.eval_resize).iou_macro
    total = synth_time + train_time + time.perf_counter() - t0
    iou = record.reports["test"].iou_macro

    _, params2, record2, _ = desk_runs("focal_tversky", key="focal_tversky_repeat")
    a = write_run(tmp_path / "a", cfg, params, record)
    b = write_run(tmp_path / "b", cfg, params2, record2)
    identical = all((a / f).read_bytes() == (b / f).read_bytes() for f in ("metrics.csv", "history.csv", "params.bin"))

    checks = {
        "a": record.train_loss[-1] <= 0.5 * record.train_loss[0],
        "b": iou >= 0.9 * ceiling,
        "c": total < 300,
        "d": identical,
    }
    ok = all(checks.values())
    verdict(5, ok, f"loss {record.train_loss[0]:.4f}->{record.train_loss[-1]:.4f}; test IoU {iou:.4f} "
                   f"vs Otsu ceiling {ceiling:.4f}; {total:.0f} s; repeat identical={identical}")
    assert ok, checks


def test_criterion_6_collapse(tmp_path_factory, verdict):
    entries = materialize_synthetic(tmp_path_factory.mktemp("sparse"), 300, 64, 64, 7, counts=(200, 40, 60),
                                    style=SPARSE_STYLE)
    test = select_split(entries, "test")
    cfg = DESK.replace(loss=LossSpec("bce"))
    params, _ = train(entries, cfg)
    rep = evaluate(params, test, size=cfg.eval_resize)
    rule = rep.iou_micro < 0.01 and rep.accuracy >= 0.9 * (1 - rep.fg_fraction)
    detector_ok = (rep.collapse is Collapse.BACKGROUND) == rule

    masks = [load_entry(e, cfg.eval_resize, with_mask=True)[1] for e in test]
    blank = evaluate_masks([np.zeros_like(m) for m in masks], masks)
    exact = blank.iou_micro == 0.0 and blank.iou_macro == 0.0 and blank.accuracy == 1 - blank.fg_fraction
    flagged = blank.collapse is Collapse.BACKGROUND
    sweep = all(
        (collapse_diagnose(i, a, f) is Collapse.BACKGROUND) == (i < 0.01 and a >= 0.9 * (1 - f))
        for i, a, f in itertools.product(np.linspace(0, 0.05, 11), np.linspace(0.5, 1, 11), (0.05, 0.24))
    )
    ok = detector_ok and exact and flagged and sweep
    verdict(6, ok, f"fg {rep.fg_fraction:.4f}; bce run IoU {rep.iou_micro:.4f} acc {rep.accuracy:.4f} -> "
                   f"{rep.collapse}; all-background acc {blank.accuracy:.4f} = 1-fg, IoU 0 -> {blank.collapse}")
    assert ok


def test_criterion_7_threshold_ablation(desk_data, tmp_path, verdict):
    entries, _ = desk_data
    rows = run_ablation(entries, DESK, "thresholds", train=False)
    out = tmp_path / "ablation_thresholds.csv"
    write_rows(out, rows)
    by = {r["method"]: r["iou_macro"] for r in rows}
    schema_ok = out.read_text().splitlines()[0] == ",".join(HEADER) and list(by) == ["AMT", "AGT", "GHT", "Otsu", "MET"]
    ok = schema_ok and by["Otsu"] >= by["AMT"] and by["Otsu"] >= by["AGT"]
    verdict(7, ok, "pseudo-mask macro IoU " + ", ".join(f"{k} {v:.4f}" for k, v in by.items()))
    assert ok


def test_criterion_8_loss_ablation(desk_runs, verdict):
    iou = {k: desk_runs(k)[2].reports["test"].iou_macro for k in ("focal_tversky", "focal", "tversky", "bce")}
    ft = iou["focal_tversky"]
    ok = ft >= iou["focal"] - 0.02 and ft >= iou["tversky"] - 0.02 and ft > iou["bce"]
    verdict(8, ok, "test macro IoU " + ", ".join(f"{k} {v:.4f}" for k, v in iou.items()))
    assert ok


def test_criterion_9_determinism_and_mode_equivalence(desk_data, tmp_path, verdict):
    entries, _ = desk_data
    method = ThresholdMethod("otsu")
    relabelled = []
    for e in entries:
        m = tmp_path / ("pl_" + e.image_path.name)
        write_mask(m, pseudo_label(read_image(e.image_path), method, e.invert))
        relabelled.append(dataclasses.replace(e, mask_path=m))
    cfg = DESK.replace(epochs=3)
    p_self, r_self = train(relabelled, cfg)
    p_sup, r_sup = train(relabelled, cfg.replace(mode="supervised"))
    same = (p_self == p_sup and r_self.train_loss == r_sup.train_loss and r_self.val_loss == r_sup.val_loss
            and r_self.best_epoch == r_sup.best_epoch and r_self.seed == r_sup.seed)

    quick = DESK.replace(epochs=1)
    fwd = multi_seed_run(entries, quick, [1, 2, 3, 4, 5], workers=1)
    rev = multi_seed_run(entries, quick, [5, 4, 3, 2, 1], workers=1)
    perms = [aggregate(list(p)) for p in itertools.permutations(fwd.runs)]
    order_free = (fwd.mean, fwd.std) == (rev.mean, rev.std) and all(a == perms[0] for a in perms)
    ok = same and order_free
    verdict(9, ok, f"supervised-on-pseudo-labels == selfsup: {same}; seed aggregation order-free over "
                   f"{len(perms)} orders + reversed run: {order_free}")
    assert ok
