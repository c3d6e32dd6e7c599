"""Adam with decoupled weight decay, dropout, the epoch loop and metrics."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.metrics import accuracy_score, f1_score

from . import numerics as nx
from .data import make_batches
from .numerics import NonFiniteError, Rng, Tape, Tensor, backward

logger = logging.getLogger(__name__)


class TrainingDiverged(NonFiniteError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    clip_norm: float | None = None
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState) -> AdamState:
    """One Adam update with bias correction and decoupled weight decay.

    ``p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * p``.
    Parameters are updated by rebinding ``p.data``; moments are keyed by
    parameter identity, so the update is independent of iteration order.
    """
    gs = []
    for p in params:
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {p!r}")
        gs.append(g)
    if state.clip_norm is not None:
        norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in gs)))
        if norm > state.clip_norm:
            gs = [g * (state.clip_norm / norm) for g in gs]

    state.t += 1
    t = state.t
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g in zip(params, gs):
        key = id(p)
        m = state.m.get(key)
        v = state.v.get(key)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[key], state.v[key] = m, v
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - step - state.lr * state.weight_decay * p.data).astype(p.dtype, copy=False)
    return state


def apply_dropout(x: Tensor, p: float, rng: Rng | None, training: bool = True) -> Tensor:
    """Inverted dropout: zero with probability ``p``, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = rng.random(x.shape) >= p
    mask = keep.astype(x.dtype) / (1.0 - p)
    return nx.mul(x, Tensor(mask))


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_accuracy: float
    val_accuracy: float | None = None
    val_f1: float | None = None
    seconds: float = 0.0
    train_eval_accuracy: float | None = None


@dataclass
class TrainReport:
    seed: int
    config: dict = field(default_factory=dict)
    epochs: list[EpochRecord] = field(default_factory=list)

    def add(self, rec: EpochRecord) -> None:
        if self.epochs and rec.epoch <= self.epochs[-1].epoch:
            raise ValueError("epochs must be reported in increasing order")
        self.epochs.append(rec)

    @property
    def best(self) -> EpochRecord | None:
        scored = [e for e in self.epochs if e.val_accuracy is not None]
        if not scored:
            return self.epochs[-1] if self.epochs else None
        return max(scored, key=lambda e: (e.val_accuracy, -e.epoch))

    def records(self) -> list[str]:
        """Line-delimited ``key=value`` records, one per epoch."""
        lines = []
        for e in self.epochs:
            parts = [f"epoch={e.epoch}", f"loss={e.loss:.6f}", f"train_acc={e.train_accuracy:.4f}"]
            if e.val_accuracy is not None:
                parts.append(f"val_acc={e.val_accuracy:.4f}")
            if e.val_f1 is not None:
                parts.append(f"val_f1={e.val_f1:.4f}")
            parts.append(f"seconds={e.seconds:.2f}")
            lines.append(" ".join(parts))
        return lines

    def summary_table(self) -> str:
        head = f"{'epoch':>5} {'loss':>10} {'train_acc':>9} {'val_acc':>8} {'secs':>7}"
        rows = [head, "-" * len(head)]
        for e in self.epochs:
            va = "-" if e.val_accuracy is None else f"{e.val_accuracy:.4f}"
            rows.append(f"{e.epoch:>5} {e.loss:>10.5f} {e.train_accuracy:>9.4f} {va:>8} {e.seconds:>7.1f}")
        return "\n".join(rows)


def train_epoch(model, batches, state: AdamState, rng: Rng, epoch: int = 1) -> EpochRecord:
    """One pass over ``batches``; returns the epoch's mean loss and train accuracy."""
    params = model.parameters()
    t0 = time.perf_counter()
    total_loss, correct, seen = 0.0, 0, 0
    for batch in batches:
        with Tape() as tape:
            logits = model.logits(batch, rng=rng, training=True)
            loss = nx.cross_entropy(logits, batch.labels)
        value = float(loss.data)
        if not np.isfinite(value):
            raise TrainingDiverged(
                f"epoch {epoch}: loss became {value} after {state.t} optimizer steps (lr={state.lr})"
            )
        grads = backward(tape, loss)
        adam_step(params, grads, state)
        n = len(batch.labels)
        total_loss += value * n
        correct += int(np.sum(np.argmax(logits.data, axis=1) == batch.labels))
        seen += n
    return EpochRecord(epoch, total_loss / seen, correct / seen, seconds=time.perf_counter() - t0)


def predict(model, batches) -> tuple[np.ndarray, np.ndarray]:
    """Argmax predictions and gold labels over ``batches`` (dropout off)."""
    preds, gold = [], []
    for batch in batches:
        logits = model.logits(batch, training=False)
        preds.append(np.argmax(logits.data, axis=1))
        gold.append(np.asarray(batch.labels))
    return np.concatenate(preds), np.concatenate(gold)


def classification_metrics(y_true, y_pred, f1: bool = False) -> dict:
    y_true = np.asarray(y_true)
    if y_true.size == 0:
        raise ValueError("cannot evaluate an empty corpus")
    out = {"accuracy": float(accuracy_score(y_true, y_pred))}
    if f1:
        out["f1"] = float(f1_score(y_true, y_pred, pos_label=1, zero_division=0.0))
    return out


def evaluate(model, corpus, batch_size: int = 64, f1: bool | None = None) -> dict:
    """Accuracy (and F1 on class 1 for binary pair tasks) without dropout."""
    if len(corpus) == 0:
        raise ValueError("cannot evaluate an empty corpus")
    if f1 is None:
        f1 = corpus.is_pair and corpus.num_classes == 2
    batches = make_batches(corpus, batch_size, bucket=True, shuffle=False)
    preds, gold = predict(model, batches)
    return classification_metrics(gold, preds, f1)


def fit(
    model,
    train,
    state: AdamState,
    rng: Rng,
    epochs: int,
    batch_size: int = 32,
    val=None,
    bucket: bool = True,
    report: TrainReport | None = None,
    on_epoch=None,
    stop_at_train_accuracy: float | None = None,
) -> TrainReport:
    """Train for up to ``epochs`` epochs, evaluating on ``val`` after each.

    ``on_epoch(record, model)`` is called after every epoch (the CLI uses it
    to checkpoint the best validation model).
    """
    report = report or TrainReport(seed=rng.seed)
    for epoch in range(1, epochs + 1):
        batches = make_batches(train, batch_size, bucket=bucket, rng=rng)
        rec = train_epoch(model, batches, state, rng, epoch)
        if val is not None and len(val):
            metrics = evaluate(model, val, batch_size=max(batch_size, 64))
            rec.val_accuracy = metrics["accuracy"]
            rec.val_f1 = metrics.get("f1")
        if stop_at_train_accuracy is not None:
            rec.train_eval_accuracy = evaluate(model, train, batch_size=max(batch_size, 64))["accuracy"]
        report.add(rec)
        logger.info("epoch %d loss %.5f train_acc %.4f val_acc %s", epoch, rec.loss, rec.train_accuracy, rec.val_accuracy)
        if on_epoch is not None:
            on_epoch(rec, model)
        if stop_at_train_accuracy is not None and rec.train_eval_accuracy >= stop_at_train_accuracy:
            break
    return report
