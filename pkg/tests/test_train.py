import math

import numpy as np
import pytest

from pyramidssl.errors import ConfigError, DataFormatError, Diverged, OutOfRange
from pyramidssl.model import Classifier, EncoderSpec, build_siamese
from pyramidssl.nncore import load_weights
from pyramidssl.pretext import Shard
from pyramidssl.train import (DownstreamSchedule, LogRecord, PretextSchedule, StallMonitor, TrainLog,
                              lr_at, stall_events, train_downstream, train_pretext)

SPEC = EncoderSpec([(4, 1), (8, 1)])
ACTIONS = [["lr", 1e-4], ["batch", 64]]


def test_stall_events_basic_trace():
    losses = [1.0, 0.9, 0.9, 0.9, 0.9, 0.8, 0.8, 0.8, 0.8, 0.8]
    assert stall_events(losses, 3, 1e-3, ACTIONS) == [(5, ("lr", 1e-4)), (9, ("batch", 64))]


def test_stall_events_sub_delta_improvements_count_as_stall():
    assert stall_events([1.0, 0.9995, 0.999, 0.9985], 3, 1e-3, ACTIONS) == [(4, ("lr", 1e-4))]


def test_stall_actions_fire_once_each():
    assert stall_events([1.0] * 20, 2, 0.0, ACTIONS) == [(3, ("lr", 1e-4)), (5, ("batch", 64))]
    assert stall_events([5, 4, 3, 2, 1], 1, 0.0, ACTIONS) == []


def test_stall_monitor_resets_wait_after_improvement():
    mon = StallMonitor(2, 0.0, ACTIONS)
    assert [mon.update(v) for v in (1.0, 1.0, 0.5, 0.6, 0.7)] == [None, None, None, None, ("lr", 1e-4)]


SCHED = DownstreamSchedule(stage1=[[2, 1e-3], [2, 1e-4]], epochs=12, peak_lr=1e-4, warmup_frac=0.05)
IPE = 11  # stage 2 has 88 iterations, 5 of them warmup


def test_lr_stage1_piecewise():
    assert lr_at(SCHED, 1, 0, IPE) == 1e-3
    assert lr_at(SCHED, 1, 2 * IPE - 1, IPE) == 1e-3
    assert lr_at(SCHED, 1, 2 * IPE, IPE) == 1e-4
    assert lr_at(SCHED, 1, 4 * IPE - 1, IPE) == 1e-4
    with pytest.raises(OutOfRange):
        lr_at(SCHED, 1, 4 * IPE, IPE)


def test_lr_stage2_closed_form():
    peak, total, warm = 1e-4, 88, 5
    assert SCHED.warmup_iters(IPE) == warm
    assert abs(lr_at(SCHED, 2, 0, IPE) - 0.0) <= 1e-12
    assert abs(lr_at(SCHED, 2, 2, IPE) - peak * (1 - math.cos(math.pi * 2 / warm)) / 2) <= 1e-12
    assert abs(lr_at(SCHED, 2, warm, IPE) - peak) <= 1e-12
    mid = warm + (total - 1 - warm) // 2
    assert abs(lr_at(SCHED, 2, mid, IPE) - peak / 2) <= 1e-12
    assert abs(lr_at(SCHED, 2, total - 1, IPE) - 0.0) <= 1e-12
    with pytest.raises(OutOfRange):
        lr_at(SCHED, 2, total, IPE)
    with pytest.raises(OutOfRange):
        lr_at(SCHED, 3, 0, IPE)


def test_lr_stage2_is_monotone_in_phases():
    lrs = [lr_at(SCHED, 2, i, IPE) for i in range(88)]
    assert all(a <= b for a, b in zip(lrs[:5], lrs[1:6]))
    assert all(a >= b for a, b in zip(lrs[5:], lrs[6:]))


def test_schedule_validation():
    with pytest.raises(ConfigError):
        DownstreamSchedule(epochs=4).validate()
    with pytest.raises(ConfigError):
        DownstreamSchedule(warmup_frac=0).validate()
    with pytest.raises(ConfigError):
        PretextSchedule(actions=[["momentum", 0.9]]).validate()


def test_trainlog_monotone_and_csv(tmp_path):
    log = TrainLog()
    log.append(LogRecord(1, 10, 1.0, 0.9, 0.2, 1e-3, 32, "best"))
    log.append(LogRecord(2, 20, 0.8, 0.7, 0.4, 1e-3, 32, "best"))
    with pytest.raises(ValueError):
        log.append(LogRecord(3, 5, 0.8, 0.7, 0.4, 1e-3, 32))
    assert log.best.epoch == 2 and log.events() == [(0, "best"), (1, "best")]
    log.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "epoch,iter,train_loss,val_loss,val_acc,lr,batch,event"
    assert len(lines) == 3


def toy_location_shard(rng, count, size=8):
    """Children are bright in the quadrant-pair that the label names, so the task is learnable."""
    labels = rng.integers(0, 16, count)
    parents = rng.integers(0, 60, (count, size, size, 3), dtype=np.uint8)
    children = parents.copy()
    children[..., 0] += (labels * 12).astype(np.uint8)[:, None, None]
    return Shard(labels, parents, children, 2, size)


def test_train_pretext_learns_toy_task(tmp_path):
    rng = np.random.default_rng(0)
    train, val = toy_location_shard(rng, 400), toy_location_shard(rng, 100)
    model = build_siamese(SPEC, "location", hidden=32, seed=0)
    sched = PretextSchedule(lr0=3e-3, batch0=16, max_epochs=8)
    res = train_pretext(model, train, val, sched, seed=1, out=tmp_path)
    assert res.best_val_acc > 0.3
    assert len(res.log.records) == 8
    assert (tmp_path / "trainlog.csv").exists()
    saved = load_weights(tmp_path / "checkpoint")
    np.testing.assert_array_equal(saved["head.out.w"], res.state["head.out.w"])


def test_stall_actions_change_lr_and_batch():
    rng = np.random.default_rng(2)
    train, val = toy_location_shard(rng, 64), toy_location_shard(rng, 16)
    model = build_siamese(SPEC, "location", hidden=8, seed=0)
    sched = PretextSchedule(lr0=1e-3, batch0=16, max_epochs=3, stall_patience=1, stall_delta=10.0)
    recs = train_pretext(model, train, val, sched, seed=1).log.records
    # the first evaluation always improves on +inf; the actions fire on the next two
    assert recs[0].lr == 1e-3 and "stall" not in recs[0].event
    assert recs[1].event.startswith("stall: lr -> 0.0001") and recs[1].lr == 1e-4
    assert recs[2].event.startswith("stall: batch -> 64") and recs[2].batch == 64
    # the batch change applies from the following epoch on
    assert [r.iter for r in recs] == [4, 8, 12]


def test_train_pretext_is_deterministic():
    rng = np.random.default_rng(3)
    train, val = toy_location_shard(rng, 64), toy_location_shard(rng, 16)
    runs = []
    for _ in range(2):
        model = build_siamese(SPEC, "location", hidden=8, seed=0)
        runs.append(train_pretext(model, train, val, PretextSchedule(lr0=1e-3, max_epochs=2), seed=7))
    for k in runs[0].state:
        np.testing.assert_array_equal(runs[0].state[k], runs[1].state[k])


def test_train_pretext_rejects_mismatches():
    rng = np.random.default_rng(0)
    shard = toy_location_shard(rng, 8)
    with pytest.raises(DataFormatError):
        train_pretext(build_siamese(SPEC, "location"), shard, shard, PretextSchedule(), task="pair")
    with pytest.raises(DataFormatError):
        train_pretext(build_siamese(SPEC, "location", n=1), shard, shard, PretextSchedule())


def test_train_pretext_divergence(monkeypatch):
    rng = np.random.default_rng(0)
    shard = toy_location_shard(rng, 8)
    model = build_siamese(SPEC, "location")
    original = model.loss

    def nan_loss(logits, labels):
        out = original(logits, labels)
        out.data = np.array(np.nan, dtype=out.data.dtype)
        return out

    monkeypatch.setattr(model, "loss", nan_loss)
    with pytest.raises(Diverged):
        train_pretext(model, shard, shard, PretextSchedule(max_epochs=1))


def toy_patches(rng, count, size=8):
    labels = rng.integers(0, 2, count)
    imgs = rng.integers(0, 100, (count, size, size, 3), dtype=np.uint8)
    imgs[labels == 1, ..., 2] += 120
    return imgs, labels


def test_train_downstream_stage1_keeps_encoder_frozen(tmp_path):
    rng = np.random.default_rng(0)
    x, y = toy_patches(rng, 40)
    model = Classifier(SPEC, 2, seed=0)
    before = {k: t.data.copy() for k, t in model.encoder.params.items()}
    sched = DownstreamSchedule(stage1=[[1, 1e-2], [1, 1e-3]], epochs=3, peak_lr=0.0, batch=8)
    res = train_downstream(model, x, y, x[:10], y[:10], sched, seed=0, out=tmp_path)
    for k, v in before.items():
        np.testing.assert_array_equal(res.state[k], v)
    assert not np.array_equal(res.state["classifier.w"], Classifier(SPEC, 2, seed=0).head["classifier.w"].data)
    assert [r.event for r in res.log.records][2].startswith("unfreeze")
    assert (tmp_path / "checkpoint" / "model.json").exists()


def test_train_downstream_learns_and_unfreezes():
    rng = np.random.default_rng(1)
    x, y = toy_patches(rng, 160)
    vx, vy = toy_patches(rng, 30)
    model = Classifier(SPEC, 2, seed=0)
    before = {k: t.data.copy() for k, t in model.encoder.params.items()}
    sched = DownstreamSchedule(stage1=[[1, 1e-2], [1, 1e-3]], epochs=8, peak_lr=3e-3, batch=8)
    res = train_downstream(model, x, y, vx, vy, sched, seed=0)
    assert res.best_val_acc >= 0.9
    assert any(not np.array_equal(res.state[k], v) for k, v in before.items())
    assert not model.frozen


def test_train_downstream_empty():
    with pytest.raises(DataFormatError):
        train_downstream(Classifier(SPEC, 2), np.zeros((0, 8, 8, 3), np.uint8), np.zeros(0, int),
                         np.zeros((0, 8, 8, 3), np.uint8), np.zeros(0, int), DownstreamSchedule())
