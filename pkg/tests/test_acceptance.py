"""Acceptance run: one test per criterion, each printing a single PASS/FAIL line.

The heavy criteria (pretext learnability, transfer benefit, pipeline
determinism) train real models at desk scale and take most of the suite's
runtime. They share one synthetic cohort and one location-pretext checkpoint.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from pyramidssl import config as C
from pyramidssl.cli import main
from pyramidssl.downstream import majority_vote
from pyramidssl.evaluation import ablation, aggregate_runs, curve_table, mean_class_accuracy
from pyramidssl.model import SiameseNet
from pyramidssl.pretext import SamplerConfig, build_dataset, read_dataset, sample_pair
from pyramidssl.pyramid import (PatchRef, PyramidImage, child_region, children_set, quantize,
                                read_pyramid, write_pyramid)
from pyramidssl.synth import SynthSpec, generate_cohort, generate_pyramid
from pyramidssl.train import DownstreamSchedule, lr_at, stall_events, train_pretext
from pyramidssl.verify import GRAD_TOL, gradient_suite, oracle_check

SEED = 1
BUDGET_S = 30 * 60
# Epoch caps for the learnability runs; both finish far inside the time budget.
PRETEXT_EPOCHS = {"location": 22, "pair": 4}


@pytest.fixture
def report(capsys):
    def emit(number: int, title: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
    return emit


# -- 1, 2: oracle and gradients ----------------------------------------------

def test_label_oracle_equivalence(report):
    t = time.perf_counter()
    r = oracle_check(count=1000, seed=SEED)
    elapsed = time.perf_counter() - t
    ok = r.total >= 1000 and r.matched == r.total and elapsed < 60
    report(1, "label oracle", ok, f"{r.matched}/{r.total} labels reproduced in {elapsed:.1f}s")
    assert ok


def test_gradient_verification(report):
    t = time.perf_counter()
    worst = gradient_suite(shapes_per_op=20, seed=SEED, h=1e-5)
    elapsed = time.perf_counter() - t
    top = max(worst, key=worst.get)
    ok = all(e < GRAD_TOL for e in worst.values()) and elapsed < 60
    report(2, "gradient checks", ok,
           f"{len(worst)} ops x 20 shapes, worst {top} rel err {worst[top]:.1e}, {elapsed:.1f}s")
    assert ok


# -- 3: geometry property suite ----------------------------------------------

def _random_pyramid(rng) -> PyramidImage:
    levels = int(rng.integers(3, 5))
    bh, bw = (int(v) for v in rng.integers(1, 4, 2))
    top = quantize(rng.random((bh << (levels - 1), bw << (levels - 1), 3)))
    stack = [top]
    for _ in range(levels - 1):
        a = stack[-1]
        stack.append(a.reshape(a.shape[0] // 2, 2, a.shape[1] // 2, 2, 3).mean(axis=(1, 3)))
    return PyramidImage([quantize(a) for a in stack[::-1]])


def test_geometry_properties(report, tmp_path):
    rng = np.random.default_rng(SEED)
    failures = {"cover": 0, "cardinality": 0, "composition": 0, "roundtrip": 0}
    for i in range(1000):
        h, w = (int(v) for v in rng.integers(1, 8, 2))
        p = PatchRef(int(rng.integers(0, 4)), int(rng.integers(0, 40)), int(rng.integers(0, 40)), h, w)
        n, a, b = (int(v) for v in rng.integers(0, 4, 3))
        kids = children_set(p, n)
        failures["cardinality"] += len(kids) != 4 ** n
        region = child_region(p, n)
        cover = np.zeros((region.height, region.width), dtype=int)
        for k in kids:
            cover[k.row - region.row:k.bottom - region.row, k.col - region.col:k.right - region.col] += 1
        failures["cover"] += not (cover == 1).all()
        failures["composition"] += child_region(child_region(p, a), b) != child_region(p, a + b)
        img = _random_pyramid(rng)
        back = read_pyramid(write_pyramid(img, tmp_path / f"p{i}"))
        failures["roundtrip"] += not all(np.array_equal(x, y) for x, y in zip(img.levels, back.levels))
    ok = not any(failures.values())
    report(3, "geometry properties", ok, f"1000 instances, failures {failures}")
    assert ok


# -- 6, 7: schedule and metric spot checks -----------------------------------

def test_schedule_units(report):
    actions = [["lr", 1e-4], ["batch", 64]]
    events = stall_events([1.0, 0.9, 0.9, 0.9, 0.9, 0.8, 0.8, 0.8, 0.8, 0.8], 3, 1e-3, actions)
    sched = DownstreamSchedule(stage1=[[2, 1e-3], [2, 1e-4]], epochs=12, peak_lr=1e-4)
    ipe, total, warm = 11, 88, 5
    half = (total - 1 + warm) / 2
    expected = {
        0: 0.5 * 1e-4 * (1 - np.cos(np.pi * 0 / warm)),
        warm: 1e-4,
        total - 1: 0.0,
        int(half): 0.5 * 1e-4 * (1 + np.cos(np.pi * (int(half) - warm) / (total - 1 - warm))),
    }
    worst = max(abs(lr_at(sched, 2, i, ipe) - v) for i, v in expected.items())
    ok = events == [(5, ("lr", 1e-4)), (9, ("batch", 64))] and worst <= 1e-12
    report(6, "schedules", ok, f"stall events {events}, lr_at max abs err {worst:.1e}")
    assert ok


def test_vote_and_metric_units(report):
    vote = majority_vote(np.array([0, 1, 1, 2]), None, 3)
    tie = majority_vote(np.array([0, 0, 1, 1]), np.array([[.9, .1], [.9, .1], [.4, .6], [.4, .6]]), 2)
    acc = mean_class_accuracy([[3, 1], [1, 1]])
    agg = aggregate_runs([np.array([[2, 0], [0, 2]]), np.array([[1, 1], [1, 1]])])
    ok = (vote.final == 1 and tie.final == 0 and acc == 0.625
          and agg.std_accuracy == pytest.approx(0.5 / np.sqrt(2), abs=1e-15)
          and agg.misclassified == 1)
    report(7, "voting and metrics", ok,
           f"vote {vote.final}, tie {tie.final}, mean class acc {acc}, std {agg.std_accuracy:.6f}")
    assert ok


# -- 9: pair balance -----------------------------------------------------------

def test_pair_label_balance(report):
    cfg = SamplerConfig(patch_size=16, input_size=8, seed=SEED)
    imgs = [generate_pyramid(SynthSpec(seed=s, levels=4, base_size=32)) for s in range(4)]
    rng = np.random.default_rng(SEED)
    labels = []
    for i in range(5000):
        a, b = sample_pair(imgs[i % 4], cfg, rng, imgs[(i + 1) % 4])
        labels += [a.label, b.label]
    frac = float(np.mean(labels))
    ok = 0.47 <= frac <= 0.53
    report(9, "pair balance", ok, f"positive fraction {frac:.4f} over {len(labels)} pairs")
    assert ok


# -- 4, 5: desk-scale learning runs ------------------------------------------

@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    cfg = C.resolve({"seed": SEED})
    root = tmp_path_factory.mktemp("desk")
    cohort = generate_cohort(C.cohort_config(cfg), root / "cohort", SEED)
    return cfg, cohort, root, {}


def _pretext(desk, task):
    cfg, cohort, root, cache = desk
    if task in cache:
        return cache[task]
    t = time.perf_counter()
    meta = build_dataset(cohort, C.sampler_config(cfg), int(cfg["pretext"]["count"]),
                         root / f"ds_{task}", tuple(cfg["pretext"]["split_ratio"]), task)
    _, train, val = read_dataset(root / f"ds_{task}")
    model = SiameseNet(C.encoder_spec(cfg), task, train.n, cfg["model"]["hidden"], seed=SEED)
    schedule = C.pretext_schedule(cfg)
    schedule.max_epochs = PRETEXT_EPOCHS[task]
    result = train_pretext(model, train, val, schedule, seed=SEED, out=root / f"pre_{task}", task=task)
    cache[task] = (meta, result, time.perf_counter() - t, root / f"pre_{task}" / "checkpoint")
    return cache[task]


@pytest.mark.slow
def test_pretext_learnability(report, desk):
    lines, ok = [], True
    for task, target, chance in (("location", 0.50, 1 / 16), ("pair", 0.75, 0.5)):
        meta, result, elapsed, _ = _pretext(desk, task)
        good = meta["count"] >= 20000 and result.best_val_acc >= target and elapsed < BUDGET_S
        ok &= good
        lines.append(f"{task} val acc {result.best_val_acc:.3f} (target {target}, chance {chance:.4g}) "
                     f"on {meta['count']} samples in {elapsed / 60:.1f} min")
    report(4, "pretext learnability", ok, "; ".join(lines))
    assert ok


@pytest.mark.slow
def test_transfer_benefit(report, desk):
    cfg, cohort, _, _ = desk
    checkpoint = _pretext(desk, "location")[3]
    common = dict(runs=5, seed=SEED, schedule=C.downstream_schedule(cfg),
                  tiling=C.downstream_config(cfg), spec=C.encoder_spec(cfg))
    ssl_rows, _ = ablation(cohort, {"location-ssl": str(checkpoint)}, (0.33, 0.66, 1.0), **common)
    rnd_rows, _ = ablation(cohort, {"random-init": None}, (0.33,), **common)
    curve = {(c["variant"], c["fraction"]): c for c in curve_table(ssl_rows + rnd_rows)}
    ssl = [curve[("location-ssl", f)] for f in (0.33, 0.66, 1.0)]
    gain = ssl[0]["mean_acc"] - curve[("random-init", 0.33)]["mean_acc"]
    monotone = all(b["mean_acc"] >= a["mean_acc"] - a["std_acc"] for a, b in zip(ssl, ssl[1:]))
    ok = gain >= 0.05 and monotone
    shown = ", ".join(f"{c['fraction']:g}: {c['mean_acc']:.3f}+-{c['std_acc']:.3f}" for c in ssl)
    report(5, "transfer benefit", ok,
           f"ssl - random at 0.33 = {100 * gain:+.1f} points; ssl curve {shown}; "
           f"random@0.33 {curve[('random-init', 0.33)]['mean_acc']:.3f}")
    assert ok


# -- 8: determinism of the command-line pipeline ------------------------------

def _pipeline(root: Path, cfg_path: Path) -> None:
    common = ["--config", str(cfg_path), "--seed", str(SEED)]
    steps = [
        ["gen-synth", "--out", str(root / "cohort")],
        ["gen-pretext", "--cohort", str(root / "cohort"), "--out", str(root / "data")],
        ["train-pretext", "--data", str(root / "data"), "--out", str(root / "pre")],
        ["train-downstream", "--cohort", str(root / "cohort"), "--pretrained",
         str(root / "pre" / "checkpoint"), "--out", str(root / "down")],
        ["evaluate", "--cohort", str(root / "cohort"), "--model", str(root / "down" / "checkpoint"),
         "--out", str(root / "eval")],
        ["ablate", "--cohort", str(root / "cohort"), "--location", str(root / "pre" / "checkpoint"),
         "--out", str(root / "abl")],
    ]
    for step in steps:
        assert main([step[0], *common, *step[1:]]) == 0, step[0]


@pytest.mark.slow
def test_pipeline_determinism(report, tmp_path):
    # desk geometry and schedules; counts trimmed so two full passes stay short
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({
        "pretext": {"count": 2000},
        "train": {"pretext": {"max_epochs": 1}, "downstream": {"epochs": 6}},
        "eval": {"fractions": [0.33, 1.0], "runs": 2},
    }))
    outputs = []
    for attempt in ("a", "b"):
        _pipeline(tmp_path / attempt, cfg_path)
        outputs.append({name: (tmp_path / attempt / sub / name).read_bytes()
                        for sub, name in (("eval", "predictions.csv"), ("abl", "ablation.csv"))})
    same = {name: outputs[0][name] == outputs[1][name] for name in outputs[0]}
    ok = all(same.values())
    report(8, "determinism", ok, f"byte-identical {same}")
    assert ok
