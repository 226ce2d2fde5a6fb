"""Mini-batch Adam training on batch-mean cross-entropy."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import EmptyDataset
from ..nn import functional as F
from ..nn.layers import recalibrate_batchnorm
from ..nn.optim import AdamState, adam_step
from ..seeding import substream
from .fusion import BeamModelConfig, BeamPredictor, ModelInputs

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    seed: int = 0
    eval_batch_size: int = 64
    # training samples used to re-estimate BatchNorm population stats before
    # each validation pass; 0 keeps the momentum running averages
    bn_calibration_samples: int = 512


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float


@dataclass
class History:
    initial_loss: float
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_acc", "val_acc"])
        for r in self.epochs:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.train_acc), repr(r.val_acc)])
        return buf.getvalue()


def batch_logits(model: BeamPredictor, x: ModelInputs, batch_size=64, train=False) -> np.ndarray:
    out = [model.forward(x.take(np.arange(a, min(a + batch_size, len(x)))), train)
           for a in range(0, len(x), batch_size)]
    return np.concatenate(out, axis=0)


def mean_loss(model, x: ModelInputs, labels, batch_size=64) -> float:
    logits = batch_logits(model, x, batch_size)
    return F.softmax_cross_entropy(logits, labels)[0]


def accuracy(model, x: ModelInputs, labels, batch_size=64) -> float:
    if len(x) == 0:
        return float("nan")
    return float((batch_logits(model, x, batch_size).argmax(axis=1) == labels).mean())


def fit(
    model: BeamPredictor,
    train_x: ModelInputs,
    train_y,
    val_x: ModelInputs | None = None,
    val_y=None,
    cfg: TrainConfig = TrainConfig(),
    on_epoch=None,
) -> History:
    """Train in place and restore the best-validation parameters.

    Labels are 0-based class indices. Without a validation split the final
    parameters are kept. ``on_epoch(record, model)`` runs after each epoch.
    """
    train_y = np.asarray(train_y, dtype=int)
    n = len(train_x)
    if n == 0:
        raise EmptyDataset("training split is empty")
    has_val = val_x is not None and len(val_x) > 0
    shuffle_rng = substream(cfg.seed, "shuffle")
    calib_idx = np.sort(substream(cfg.seed, "calibrate").permutation(n)[:cfg.bn_calibration_samples])
    state = AdamState(learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay)
    params = model.parameters()
    hist = History(initial_loss=mean_loss(model, train_x, train_y, cfg.eval_batch_size))
    best_acc, best_state = -1.0, None
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for a in range(0, n, cfg.batch_size):
            idx = order[a:a + cfg.batch_size]
            model.zero_grad()
            logits = model.forward(train_x.take(idx), train=True)
            loss, dlogits = F.softmax_cross_entropy(logits, train_y[idx])
            model.backward(dlogits)
            adam_step(params, state)
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == train_y[idx]).sum())
        if cfg.bn_calibration_samples > 0:
            step = cfg.eval_batch_size
            recalibrate_batchnorm(model, (train_x.take(calib_idx[a:a + step]) for a in range(0, len(calib_idx), step)))
        val_acc = accuracy(model, val_x, np.asarray(val_y, int), cfg.eval_batch_size) if has_val else float("nan")
        rec = EpochRecord(epoch, loss_sum / n, correct / n, val_acc)
        hist.epochs.append(rec)
        log.info("epoch %d loss %.4f train_acc %.4f val_acc %.4f", epoch, rec.train_loss, rec.train_acc, val_acc)
        if has_val and val_acc > best_acc:
            best_acc, best_state, hist.best_epoch = val_acc, model.state_dict(), epoch
        if on_epoch is not None:
            on_epoch(rec, model)
    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        hist.best_epoch = cfg.epochs
    return hist


def train(train_x, train_y, model_cfg: BeamModelConfig, cfg: TrainConfig = TrainConfig(),
          val_x=None, val_y=None, on_epoch=None):
    """Build a fresh predictor from ``model_cfg`` and fit it; returns (model, history)."""
    model = BeamPredictor(model_cfg, seed=cfg.seed)
    hist = fit(model, train_x, train_y, val_x, val_y, cfg, on_epoch)
    return model, hist
