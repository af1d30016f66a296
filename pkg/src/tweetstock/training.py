"""Losses, Adam, the epoch loop with early stopping, and prediction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .models import Model
from .store import Batch, SampleStore, iterate_batches
from .tensor import Tape, Tensor, backward

PROB_FLOOR = 1e-12  # probabilities are clamped to [floor, 1 - floor] before logs


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 128
    max_epochs: int = 50
    patience: int = 4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


@dataclass
class TrainReport:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)
    val_mcc: List[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    best_val_loss: float = float("inf")


def _check_labels(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    return labels


def bce_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy: -(1/B) sum y ln p + (1-y) ln(1-p)."""
    labels = _check_labels(labels)
    if probs.shape != labels.shape:
        raise T.ShapeError(f"probs {probs.shape} vs labels {labels.shape}")
    p = T.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    y = Tensor(labels)
    term = y * T.log(p) + (1.0 - y) * T.log(1.0 - p)
    return T.scale(term.mean(), -1.0)


def auxiliary_loss(aux_probs: Tensor, aux_labels: np.ndarray, alpha: float) -> Tensor:
    """Per-day BCE summed over the window, the final day at weight 1 and the
    other days down-weighted by alpha."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    aux_labels = _check_labels(aux_labels)
    if aux_probs.shape != aux_labels.shape or aux_probs.shape[1] != 5:
        raise T.ShapeError(f"aux probs {aux_probs.shape} vs labels {aux_labels.shape}")
    total: Optional[Tensor] = None
    for day in range(5):
        weight = 1.0 if day == 4 else alpha
        term = T.scale(bce_loss(aux_probs[:, day], aux_labels[:, day]), weight)
        total = term if total is None else total + term
    return total


def training_objective(model: Model, batch: Batch, training: bool = True,
                       rng: Optional[np.random.Generator] = None) -> Tensor:
    """The loss actually optimized: auxiliary-weighted BCE for auxiliary
    models (whose final-day term is the main BCE), plain BCE otherwise."""
    out = model.forward(batch, training=training, rng=rng)
    if model.cfg.auxiliary:
        return auxiliary_loss(out.aux_probs, batch.aux, model.cfg.aux_weight)
    return bce_loss(out.final_prob, batch.y)


# -- Adam --------------------------------------------------------------------


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Sequence[Tuple[str, Tensor]], grads: Sequence[np.ndarray],
              state: AdamState, cfg: TrainConfig) -> AdamState:
    """One bias-corrected Adam update, in place on the parameter tensors.

    A non-finite gradient aborts the whole step (no parameter is touched)
    with a diagnostic naming the offending parameter.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads must align")
    for (name, p), g in zip(params, grads):
        if g.shape != p.data.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {p.data.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    correction1 = 1.0 - cfg.beta1 ** state.t
    correction2 = 1.0 - cfg.beta2 ** state.t
    for (name, p), g in zip(params, grads):
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p.data = p.data - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return state


class Adam:
    """Stateful wrapper reading gradients off the parameter tensors."""

    def __init__(self, params: Sequence[Tuple[str, Tensor]], cfg: TrainConfig):
        self.params = list(params)
        self.cfg = cfg
        self.state = AdamState()

    def step(self) -> None:
        grads = []
        for name, p in self.params:
            if p.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient; "
                                 "was backward() run?")
            grads.append(p.grad)
        adam_step(self.params, grads, self.state, self.cfg)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


# -- epoch loop ----------------------------------------------------------------


def predict(model: Model, batch: Batch) -> np.ndarray:
    """Hard labels from the final-day probability; ties at 0.5 go positive.
    Auxiliary day probabilities are ignored."""
    out = model.forward(batch, training=False)
    return (out.final_prob.data >= 0.5).astype(np.int64)


def _split_loss(model: Model, store: SampleStore, split: str, batch_size: int) -> float:
    total, count = 0.0, 0
    for batch in iterate_batches(store, split, batch_size):
        loss = training_objective(model, batch, training=False)
        total += loss.item() * len(batch)
        count += len(batch)
    return total / count


def train(model: Model, store: SampleStore, cfg: TrainConfig,
          log_fn: Optional[Callable[[str], None]] = None) -> TrainReport:
    """Seeded epoch loop with per-epoch validation and early stopping.

    Stops after ``patience`` consecutive epochs without strict validation-loss
    improvement; the best epoch's parameters are restored into the model.
    """
    from .evaluation import accuracy, confusion_counts, mcc

    if store.split_size("train") == 0:
        raise ValueError("training split is empty")
    emit = log_fn or (lambda line: None)
    dropout_rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(model.parameters(), cfg)
    report = TrainReport()
    best_state = model.state_arrays()
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        shuffle_seed = cfg.seed * 1_000_003 + epoch
        epoch_total, epoch_count = 0.0, 0
        for batch in iterate_batches(store, "train", cfg.batch_size, shuffle_seed):
            with Tape():
                loss = training_objective(model, batch, training=True, rng=dropout_rng)
                backward(loss)
            optimizer.step()
            optimizer.zero_grad()
            epoch_total += loss.item() * len(batch)
            epoch_count += len(batch)
        train_loss = epoch_total / epoch_count
        report.train_loss.append(train_loss)
        emit(f"epoch={epoch} split=train loss={train_loss:.6f}")

        val_loss = _split_loss(model, store, "val", cfg.batch_size)
        preds, truths = [], []
        for batch in iterate_batches(store, "val", cfg.batch_size):
            preds.append(predict(model, batch))
            truths.append(batch.y.astype(np.int64))
        counts = confusion_counts(np.concatenate(preds), np.concatenate(truths))
        val_acc, val_mcc = accuracy(counts), mcc(counts)
        report.val_loss.append(val_loss)
        report.val_accuracy.append(val_acc)
        report.val_mcc.append(val_mcc)
        emit(f"epoch={epoch} split=val loss={val_loss:.6f} "
             f"accuracy={val_acc:.3f} mcc={val_mcc:.5f}")

        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_state = model.state_arrays()
            stale = 0
        else:
            stale += 1
        report.stopped_epoch = epoch
        if stale >= cfg.patience:
            break
    model.load_state_arrays(best_state)
    return report
