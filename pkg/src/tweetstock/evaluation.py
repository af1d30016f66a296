"""Confusion-matrix accounting, accuracy, and Matthews Correlation Coefficient."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import Model
from .store import SampleStore, iterate_batches


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class EvalReport:
    split: str
    sample_count: int
    accuracy: float
    mcc: float
    counts: ConfusionCounts

    def to_record(self) -> str:
        c = self.counts
        return (f"split={self.split} n={self.sample_count} "
                f"accuracy={self.accuracy:.3f} mcc={self.mcc:.5f} "
                f"tp={c.tp} tn={c.tn} fp={c.fp} fn={c.fn}")


def confusion_counts(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1 or pred.size == 0:
        raise ValueError(f"pred {pred.shape} and truth {truth.shape} must be equal, "
                         "nonempty 1-D vectors")
    for name, arr in (("pred", pred), ("truth", truth)):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must contain only 0 and 1")
    p = pred.astype(bool)
    t = truth.astype(bool)
    return ConfusionCounts(
        tp=int((p & t).sum()),
        tn=int((~p & ~t).sum()),
        fp=int((p & ~t).sum()),
        fn=int((~p & t).sum()),
    )


def accuracy(c: ConfusionCounts) -> float:
    """Percent correct."""
    if c.total == 0:
        raise ValueError("accuracy of zero samples is undefined")
    return 100.0 * (c.tp + c.tn) / c.total


def mcc(c: ConfusionCounts) -> float:
    """Matthews Correlation Coefficient from exact integer counts.

    Zero-denominator cases (any empty margin, e.g. an all-positive predictor)
    return 0 by convention.
    """
    denom_sq = ((c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn))
    if denom_sq == 0:
        return 0.0
    numerator = c.tp * c.tn - c.fp * c.fn  # exact in Python ints
    return float(numerator) / math.sqrt(denom_sq)


def evaluate(model: Model, store: SampleStore, split: str,
             batch_size: int = 128) -> EvalReport:
    """Unshuffled eval-mode pass over a split."""
    from .training import predict

    n = store.split_size(split)
    if n == 0:
        raise ValueError(f"split {split!r} is empty")
    counts = ConfusionCounts()
    for batch in iterate_batches(store, split, batch_size):
        counts = counts + confusion_counts(predict(model, batch),
                                           batch.y.astype(np.int64))
    assert counts.total == n
    return EvalReport(split=split, sample_count=n, accuracy=accuracy(counts),
                      mcc=mcc(counts), counts=counts)
