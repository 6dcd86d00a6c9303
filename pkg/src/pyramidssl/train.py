"""Training loops and learning-rate/batch schedules."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, Diverged, OutOfRange
from .model import Classifier, SiameseNet
from .nncore import Adam, backward, no_grad
from .pretext import Shard, apply_augmentation, draw_augmentation

log = logging.getLogger(__name__)


# -- logs -------------------------------------------------------------------

@dataclass
class LogRecord:
    epoch: int
    iter: int
    train_loss: float
    val_loss: float
    val_acc: float
    lr: float
    batch: int
    event: str = ""


@dataclass
class TrainLog:
    records: list[LogRecord] = field(default_factory=list)

    def append(self, rec: LogRecord) -> None:
        if self.records and rec.iter < self.records[-1].iter:
            raise ValueError("iteration counter must be monotone")
        self.records.append(rec)
        if rec.event:
            log.info("epoch %d iter %d: %s", rec.epoch, rec.iter, rec.event)

    @property
    def best(self) -> LogRecord | None:
        # first record reaching the maximum validation accuracy
        return max(self.records, key=lambda r: r.val_acc, default=None)

    def events(self) -> list[tuple[int, str]]:
        return [(i, r.event) for i, r in enumerate(self.records) if r.event]

    def write_csv(self, path: str | os.PathLike) -> None:
        names = list(LogRecord.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.records:
                row = asdict(r)
                w.writerow([f"{row[k]:.8g}" if isinstance(row[k], float) else row[k] for k in names])


# -- pretext schedule -------------------------------------------------------

@dataclass
class PretextSchedule:
    lr0: float = 2e-5
    batch0: int = 32
    weight_decay: float = 1e-5
    stall_patience: int = 3
    stall_delta: float = 1e-3
    actions: list = field(default_factory=lambda: [["lr", 1e-4], ["batch", 64]])
    max_epochs: int = 30
    eval_interval: int = 1  # epochs between validation passes

    def validate(self) -> None:
        for kind, _ in self.actions:
            if kind not in ("lr", "batch"):
                raise ConfigError(f"unknown schedule action {kind!r}")
        if self.stall_patience < 1 or self.batch0 < 1 or self.max_epochs < 1:
            raise ConfigError("stall_patience, batch0 and max_epochs must be positive")


class StallMonitor:
    """Fires the next scheduled action after ``patience`` evaluations without
    a validation-loss improvement larger than ``delta``.

    Each action fires at most once, in order; the wait counter restarts after
    every firing.
    """

    def __init__(self, patience: int, delta: float, actions):
        self.patience, self.delta = patience, delta
        self.pending = [tuple(a) for a in actions]
        self.best = math.inf
        self.wait = 0

    def update(self, val_loss: float):
        """Feed one evaluation; returns the action fired now, or ``None``."""
        if val_loss < self.best - self.delta:
            self.best, self.wait = val_loss, 0
            return None
        self.best = min(self.best, val_loss)
        self.wait += 1
        if self.wait >= self.patience and self.pending:
            self.wait = 0
            return self.pending.pop(0)
        return None


def stall_events(losses, patience: int, delta: float, actions) -> list[tuple[int, tuple]]:
    """1-based evaluation indices at which actions fire for a loss trace."""
    mon = StallMonitor(patience, delta, actions)
    fired = []
    for i, loss in enumerate(losses, start=1):
        action = mon.update(loss)
        if action is not None:
            fired.append((i, action))
    return fired


# -- downstream schedule ----------------------------------------------------

@dataclass
class DownstreamSchedule:
    stage1: list = field(default_factory=lambda: [[2, 1e-3], [2, 1e-4]])  # (epochs, lr) runs
    epochs: int = 120  # stage 1 + stage 2
    peak_lr: float = 1e-4
    warmup_frac: float = 0.05
    batch: int = 2
    weight_decay: float = 1e-5

    @property
    def stage1_epochs(self) -> int:
        return sum(int(e) for e, _ in self.stage1)

    @property
    def stage2_epochs(self) -> int:
        return self.epochs - self.stage1_epochs

    def validate(self) -> None:
        if self.stage2_epochs < 1:
            raise ConfigError(f"epochs={self.epochs} leaves no room for stage 2")
        if not 0 < self.warmup_frac < 1:
            raise ConfigError("warmup_frac must lie in (0, 1)")
        if self.batch < 1:
            raise ConfigError("batch must be positive")

    def warmup_iters(self, iters_per_epoch: int) -> int:
        return math.ceil(self.warmup_frac * self.stage2_epochs * iters_per_epoch)


def lr_at(schedule: DownstreamSchedule, stage: int, iteration: int, iters_per_epoch: int) -> float:
    """Learning rate at ``iteration`` (0-based, counted within ``stage``).

    Stage 1 steps through the constant-rate runs. Stage 2 rises as
    ``peak * (1 - cos(pi * i / W)) / 2`` over ``W`` warmup iterations, then
    follows a half cosine down to 0 at its last iteration.
    """
    if stage == 1:
        total = schedule.stage1_epochs * iters_per_epoch
        if not 0 <= iteration < total:
            raise OutOfRange(f"stage 1 iteration {iteration} outside [0, {total})")
        epoch, start = iteration // iters_per_epoch, 0
        for epochs, lr in schedule.stage1:
            start += int(epochs)
            if epoch < start:
                return float(lr)
    if stage != 2:
        raise OutOfRange(f"unknown stage {stage}")
    total = schedule.stage2_epochs * iters_per_epoch
    if not 0 <= iteration < total:
        raise OutOfRange(f"stage 2 iteration {iteration} outside [0, {total})")
    peak, warm = schedule.peak_lr, schedule.warmup_iters(iters_per_epoch)
    if iteration < warm:
        return peak * (1.0 - math.cos(math.pi * iteration / warm)) / 2.0
    decay = total - 1 - warm
    if decay <= 0:
        return peak
    return peak * (1.0 + math.cos(math.pi * (iteration - warm) / decay)) / 2.0


# -- helpers ----------------------------------------------------------------

def _check_finite(loss: float, epoch: int, iteration: int) -> None:
    if not math.isfinite(loss):
        raise Diverged(f"non-finite loss {loss} at epoch {epoch}, iteration {iteration}")


def _to_float(images: np.ndarray, dtype) -> np.ndarray:
    return images.astype(dtype) / np.asarray(255.0, dtype)


def _augment_batch(parents: np.ndarray, children: np.ndarray, rng, dtype):
    par, chi = [], []
    for p, c in zip(parents, children):
        p2, c2 = apply_augmentation(p, c, draw_augmentation(rng))
        par.append(p2)
        chi.append(c2)
    return np.stack(par).astype(dtype), np.stack(chi).astype(dtype)


def evaluate_pairs(model: SiameseNet, shard: Shard, batch: int = 256) -> tuple[float, float]:
    """Mean loss and accuracy of a siamese model on a shard (no augmentation)."""
    if len(shard) == 0:
        return math.nan, math.nan
    dtype, total, correct = model.dtype, 0.0, 0
    with no_grad():
        for s in range(0, len(shard), batch):
            sl = slice(s, s + batch)
            logits = model(_to_float(shard.children[sl], dtype), _to_float(shard.parents[sl], dtype))
            labels = shard.labels[sl]
            total += float(model.loss(logits, labels).data) * len(labels)
            correct += int((model.predict(logits.data) == labels).sum())
    return total / len(shard), correct / len(shard)


# -- pretext training -------------------------------------------------------

@dataclass
class TrainResult:
    state: dict
    log: TrainLog
    best_val_acc: float


def train_pretext(model: SiameseNet, train: Shard, val: Shard, schedule: PretextSchedule,
                  seed: int = 0, augment: bool = True, out: str | os.PathLike | None = None,
                  task: str | None = None) -> TrainResult:
    """Adam training with stall-driven lr/batch changes; keeps the best-val-accuracy weights.

    Batch-size changes take effect at the next epoch boundary. When ``out``
    is given the best checkpoint and ``trainlog.csv`` are written there.
    """
    schedule.validate()
    if task is not None and task != model.task:
        raise DataFormatError(f"dataset task {task!r} does not match model task {model.task!r}")
    if train.n != model.n and model.task == "location":
        raise DataFormatError(f"dataset zoom difference {train.n} != model n {model.n}")
    if model.task == "location" and train.labels.max(initial=0) >= model.num_outputs:
        raise DataFormatError("labels exceed the model's output count")

    rng = np.random.default_rng(seed)
    dtype = model.dtype
    opt = Adam(model.params, lr=schedule.lr0, weight_decay=schedule.weight_decay)
    monitor = StallMonitor(schedule.stall_patience, schedule.stall_delta, schedule.actions)
    batch = schedule.batch0
    trainlog, it = TrainLog(), 0
    best_acc, best_state = -1.0, model.state_dict()

    for epoch in range(1, schedule.max_epochs + 1):
        order = rng.permutation(len(train))
        losses = []
        for s in range(0, len(order), batch):
            idx = np.sort(order[s:s + batch])
            if augment:
                parents, children = _augment_batch(_to_float(train.parents[idx], np.float64),
                                                   _to_float(train.children[idx], np.float64), rng, dtype)
            else:
                parents, children = _to_float(train.parents[idx], dtype), _to_float(train.children[idx], dtype)
            opt.zero_grad()
            loss = model.loss(model(children, parents), train.labels[idx])
            value = float(loss.data)
            _check_finite(value, epoch, it)
            backward(loss)
            opt.step()
            losses.append(value)
            it += 1
        if epoch % schedule.eval_interval and epoch != schedule.max_epochs:
            continue
        val_loss, val_acc = evaluate_pairs(model, val)
        _check_finite(val_loss, epoch, it)
        event = ""
        action = monitor.update(val_loss)
        if action is not None:
            kind, value = action
            if kind == "lr":
                opt.lr = float(value)
            else:
                batch = int(value)
            event = f"stall: {kind} -> {value}"
        if val_acc > best_acc:
            best_acc, best_state = val_acc, model.state_dict()
            event = (event + "; " if event else "") + "best"
        trainlog.append(LogRecord(epoch, it, float(np.mean(losses)), val_loss, val_acc,
                                  opt.lr, batch, event))

    model.load_state_dict(best_state)
    result = TrainResult(best_state, trainlog, best_acc)
    if out is not None:
        out = Path(out)
        model.save(out / "checkpoint", {"val_acc": best_acc})
        trainlog.write_csv(out / "trainlog.csv")
    return result


# -- downstream training ----------------------------------------------------

def evaluate_classifier(model: Classifier, images: np.ndarray, labels: np.ndarray,
                        batch: int = 256) -> tuple[float, float]:
    if len(labels) == 0:
        return math.nan, math.nan
    probs = model.predict_proba(_to_float(images, model.dtype), batch)
    loss = -float(np.mean(np.log(np.clip(probs[np.arange(len(labels)), labels], 1e-12, None))))
    return loss, float((probs.argmax(1) == labels).mean())


def train_downstream(model: Classifier, train_images: np.ndarray, train_labels: np.ndarray,
                     val_images: np.ndarray, val_labels: np.ndarray,
                     schedule: DownstreamSchedule, seed: int = 0,
                     out: str | os.PathLike | None = None) -> TrainResult:
    """Stage 1 trains the head with the encoder frozen; stage 2 unfreezes
    everything under the cosine warmup schedule. Returns the best-val-accuracy
    weights (also loaded into ``model``).
    """
    schedule.validate()
    if len(train_labels) == 0:
        raise DataFormatError("empty downstream training set")
    rng = np.random.default_rng(seed)
    dtype = model.dtype
    opt = Adam(model.params, lr=0.0, weight_decay=schedule.weight_decay)
    ipe = math.ceil(len(train_labels) / schedule.batch)
    trainlog, it = TrainLog(), 0
    best_acc, best_state = -1.0, model.state_dict()
    has_val = len(val_labels) > 0

    for epoch in range(1, schedule.epochs + 1):
        stage = 1 if epoch <= schedule.stage1_epochs else 2
        if stage == 1 and not model.frozen:
            model.freeze_encoder(True)
        elif stage == 2 and model.frozen:
            model.freeze_encoder(False)
        first = (epoch - 1 if stage == 1 else epoch - 1 - schedule.stage1_epochs) * ipe
        order = rng.permutation(len(train_labels))
        losses = []
        for k, s in enumerate(range(0, len(order), schedule.batch)):
            idx = np.sort(order[s:s + schedule.batch])
            opt.lr = lr_at(schedule, stage, first + k, ipe)
            opt.zero_grad()
            loss = model.loss(model(_to_float(train_images[idx], dtype)), train_labels[idx])
            value = float(loss.data)
            _check_finite(value, epoch, it)
            backward(loss)
            opt.step()
            losses.append(value)
            it += 1
        if has_val:
            val_loss, val_acc = evaluate_classifier(model, val_images, val_labels)
        else:
            val_loss, val_acc = float(np.mean(losses)), 0.0
        event = "unfreeze" if stage == 2 and epoch == schedule.stage1_epochs + 1 else ""
        if val_acc > best_acc or not has_val:
            best_acc, best_state = val_acc, model.state_dict()
            event = (event + "; " if event else "") + "best"
        trainlog.append(LogRecord(epoch, it, float(np.mean(losses)), val_loss, val_acc,
                                  opt.lr, schedule.batch, event))

    model.load_state_dict(best_state)
    model.freeze_encoder(False)
    result = TrainResult(best_state, trainlog, best_acc)
    if out is not None:
        out = Path(out)
        model.save(out / "checkpoint", {"val_acc": best_acc})
        trainlog.write_csv(out / "trainlog.csv")
    return result
