"""Mini-batch training with early stopping, prediction and attention export."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from ..nn import Adam
from .inputs import collate
from .model import ChannelModel

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.005
    epochs: int = 30
    batch_size: int = 64
    patience: int = 5
    clip_norm: float | None = 5.0
    seed: int = 0
    calibrate: bool = True          # shift the head bias to minimize validation MAPE
    init_bias: bool = True          # start the head bias at the mean training target


@dataclass
class TrainingLog:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    bias_shift: float = 0.0


@dataclass
class Prediction:
    patient_id: str
    predicted_cost: float
    raw_output: float
    actual_cost: float
    attention: dict | None = None     # channel -> weights over that channel's events


def length_batches(items, batch_size, rng=None):
    """Index batches of similar total length.

    With ``rng``, items are shuffled, sorted by length inside windows of ten
    batches, and the batch order is shuffled; without it the split is a
    plain length sort.
    """
    lengths = np.array([max(len(s.values) for s in it.channels.values()) for it in items])
    if rng is None:
        order = np.argsort(lengths, kind="stable")
        return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    perm = rng.permutation(len(items))
    window = batch_size * 10
    batches = []
    for w in range(0, len(perm), window):
        chunk = perm[w:w + window]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def _collate(model, items, idx):
    return collate([items[i] for i in idx], model.channels, model.config.embed_dim, model.vocab_sizes)


def evaluate_loss(model: ChannelModel, items, batch_size=256):
    total, n = 0.0, 0
    for idx in length_batches(items, batch_size):
        batch = _collate(model, items, idx)
        y, _, _ = model.forward(batch)
        total += float(np.sum((y - batch.targets) ** 2))
        n += len(idx)
    return total / max(n, 1)


def train(model: ChannelModel, train_items, val_items, config: TrainConfig = TrainConfig()):
    """Fit ``model`` in place on ``log1p(cost)`` targets; restores the best-validation parameters."""
    if not train_items:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    targets = np.log1p([it.target for it in train_items])
    if config.init_bias:
        model.params["head.b"][0] = float(targets.mean())
    opt = Adam(lr=config.lr, clip_norm=config.clip_norm)
    log = TrainingLog()
    best = {k: v.copy() for k, v in model.params.items()}
    best_val = math.inf
    bad = 0
    for epoch in range(config.epochs):
        total = 0.0
        for idx in length_batches(train_items, config.batch_size, rng):
            batch = _collate(model, train_items, idx)
            loss, grads = model.loss_and_grads(batch)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}; lower the learning rate (now {config.lr})")
            total += loss * len(idx)
            if config.lr > 0:
                opt.step(model.params, grads)
        log.train_loss.append(total / len(train_items))
        val = evaluate_loss(model, val_items) if val_items else log.train_loss[-1]
        if not math.isfinite(val):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        log.val_loss.append(val)
        logger.info("epoch %d train %.4f val %.4f", epoch, log.train_loss[-1], val)
        if val < best_val:
            best_val, bad, log.best_epoch = val, 0, epoch
            best = {k: v.copy() for k, v in model.params.items()}
        else:
            bad += 1
            if bad >= config.patience:
                log.stopped_early = True
                break
    model.params.update(best)
    if config.calibrate and val_items:
        log.bias_shift = mape_bias_shift(model, val_items)
        model.params["head.b"][0] += log.bias_shift
    return model, log


def raw_outputs(model: ChannelModel, items, batch_size=256):
    y = np.empty(len(items))
    for idx in length_batches(items, batch_size):
        y[idx] = model.forward(_collate(model, items, idx))[0]
    return y


def mape_bias_shift(model: ChannelModel, items, bound=2.0):
    """Log-scale shift of the output that minimizes MAPE on ``items``.

    A squared loss on ``log1p(cost)`` centres predictions near the
    conditional median, while MAPE favours lower predictions; the shift
    moves every model to its own MAPE-optimal level.
    """
    actual = np.array([it.target for it in items], dtype=float)
    keep = actual > 0
    if not keep.any():
        return 0.0
    y = raw_outputs(model, items)[keep]
    a = actual[keep]

    def objective(delta):
        return float(np.mean(np.abs(a - np.maximum(np.expm1(y + delta), 0.0)) / a))

    res = minimize_scalar(objective, bounds=(-bound, bound), method="bounded", options={"xatol": 1e-6})
    return float(res.x) if objective(res.x) < objective(0.0) else 0.0


def predict(model: ChannelModel, items, batch_size=256, with_attention=False):
    """Predictions in the order of ``items``; costs are ``expm1`` of the output, clamped at 0."""
    out = [None] * len(items)
    for idx in length_batches(items, batch_size):
        batch = _collate(model, items, idx)
        y, alpha, _ = model.forward(batch)
        for j, i in enumerate(idx):
            att = None
            if with_attention and alpha is not None:
                att = {ch: _channel_weights(alpha[c, j], int(batch.lengths[c, j]))
                       for c, ch in enumerate(model.channels)}
            out[i] = Prediction(items[i].patient_id, max(float(np.expm1(y[j])), 0.0), float(y[j]),
                                items[i].target, att)
    return out


def _channel_weights(alpha_row, length):
    return alpha_row[: max(length - 1, 1)].copy()


def export_attention(model: ChannelModel, item):
    """Per channel, ``(day, weight)`` over the events attended from the last one.

    The last event is the query; earlier events carry the weights (a
    one-event channel puts weight 1 on itself).  An empty channel yields an
    empty list.
    """
    if not model.config.attention:
        raise ValueError("model was built without attention")
    pred = predict(model, [item], with_attention=True)[0]
    result = {}
    for ch in model.channels:
        days = item.channels[ch].days
        w = pred.attention[ch]
        if not days:
            result[ch] = []
        elif len(days) == 1:
            result[ch] = [(days[0], float(w[0]))]
        else:
            result[ch] = [(d, float(x)) for d, x in zip(days[:-1], w)]
    return result
