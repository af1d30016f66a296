"""Confusion counts, accuracy, MCC, and split evaluation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tweetstock.evaluation import (
    ConfusionCounts, EvalReport, accuracy, confusion_counts, evaluate, mcc,
)
from tweetstock.models import ModelConfig, ModelOutput, build_model
from tweetstock.tensor import Tensor

from conftest import separable_store


class TestConfusionCounts:
    def test_all_correct_positives(self):
        ones = np.ones(7, dtype=int)
        c = confusion_counts(ones, ones)
        assert (c.tp, c.tn, c.fp, c.fn) == (7, 0, 0, 0)

    def test_inverted_predictions(self):
        truth = np.array([1, 1, 0, 0, 1])
        c = confusion_counts(1 - truth, truth)
        assert c.tp == 0 and c.tn == 0
        assert c.fp == 2 and c.fn == 3

    def test_matches_per_element_recount(self, rng):
        pred = (rng.random(100) < 0.5).astype(int)
        truth = (rng.random(100) < 0.5).astype(int)
        c = confusion_counts(pred, truth)
        tp = sum(1 for p, t in zip(pred, truth) if p == 1 and t == 1)
        tn = sum(1 for p, t in zip(pred, truth) if p == 0 and t == 0)
        fp = sum(1 for p, t in zip(pred, truth) if p == 1 and t == 0)
        fn = sum(1 for p, t in zip(pred, truth) if p == 0 and t == 1)
        assert (c.tp, c.tn, c.fp, c.fn) == (tp, tn, fp, fn)
        assert c.total == 100

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            confusion_counts(np.array([1, 0]), np.array([1]))

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            confusion_counts(np.array([2]), np.array([1]))


class TestMcc:
    def test_hand_value_five_twelfths(self):
        value = mcc(ConfusionCounts(tp=2, tn=3, fp=1, fn=1))
        assert abs(value - 5.0 / 12.0) < 1e-12

    def test_perfect_classifier(self):
        assert mcc(ConfusionCounts(tp=10, tn=10, fp=0, fn=0)) == 1.0

    def test_all_positive_predictor_is_zero(self):
        assert mcc(ConfusionCounts(tp=5, tn=0, fp=5, fn=0)) == 0.0

    def test_polarity_swap_invariance(self, rng):
        for _ in range(200):
            tp, tn, fp, fn = (int(v) for v in rng.integers(0, 50, size=4))
            a = mcc(ConfusionCounts(tp, tn, fp, fn))
            b = mcc(ConfusionCounts(tp=tn, tn=tp, fp=fn, fn=fp))
            assert a == b

    @given(tp=st.integers(0, 10**6), tn=st.integers(0, 10**6),
           fp=st.integers(0, 10**6), fn=st.integers(0, 10**6))
    @settings(max_examples=300)
    def test_bounded_in_unit_interval(self, tp, tn, fp, fn):
        value = mcc(ConfusionCounts(tp, tn, fp, fn))
        assert -1.0 <= value <= 1.0

    def test_matches_brute_force_on_random_vectors(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 60))
            pred = (rng.random(n) < 0.5).astype(int)
            truth = (rng.random(n) < 0.5).astype(int)
            c = confusion_counts(pred, truth)
            # definition straight from the correlation of binary vectors
            denom = math.sqrt((c.tp + c.fp) * (c.tp + c.fn)
                              * (c.tn + c.fp) * (c.tn + c.fn))
            expected = 0.0 if denom == 0 else (c.tp * c.tn - c.fp * c.fn) / denom
            assert abs(mcc(c) - expected) < 1e-12


class TestAccuracy:
    def test_definition(self):
        c = ConfusionCounts(tp=3, tn=2, fp=4, fn=1)
        assert accuracy(c) == 100.0 * 5 / 10

    def test_zero_total_rejected(self):
        with pytest.raises(ValueError):
            accuracy(ConfusionCounts())


class _EchoModel:
    """Returns the batch's own labels as probabilities (a memorizing model)."""

    def forward(self, batch, training=False, rng=None):
        return ModelOutput(final_prob=Tensor(np.clip(batch.y, 0.01, 0.99)))


class _CoinModel:
    """Seeded random-guess probabilities, mirroring a RAND baseline."""

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def forward(self, batch, training=False, rng=None):
        return ModelOutput(final_prob=Tensor(self.rng.uniform(0.01, 0.99, len(batch))))


class TestEvaluate:
    def test_memorizing_model_scores_perfectly(self, tmp_path):
        store = separable_store(tmp_path, seed=21, n_train=40, n_val=10, n_test=10)
        report = evaluate(_EchoModel(), store, "train")
        assert report.accuracy == 100.0 and report.mcc == 1.0
        store.close()

    def test_random_guess_near_chance(self, tmp_path):
        store = separable_store(tmp_path, seed=22, n_train=1000, n_val=10, n_test=10)
        report = evaluate(_CoinModel(seed=5), store, "train")
        assert abs(report.mcc) < 0.1
        assert 45.0 < report.accuracy < 55.0
        store.close()

    def test_counts_sum_to_split_size(self, tmp_path):
        store = separable_store(tmp_path, seed=23, n_train=37, n_val=11, n_test=13)
        model = build_model(ModelConfig(arch="feedforward", dim_ff=8, dim_key=8,
                                        h=2, embed_dim=8), seed=0)
        for split, expected in (("train", 37), ("val", 11), ("test", 13)):
            report = evaluate(model, store, split)
            assert report.counts.total == expected == report.sample_count
        store.close()

    def test_empty_split_rejected(self, tmp_path):
        store = separable_store(tmp_path, seed=24, n_train=8, n_val=4, n_test=4)
        with pytest.raises(KeyError):
            evaluate(_EchoModel(), store, "nope")
        store.close()

    def test_record_format(self):
        report = EvalReport(split="test", sample_count=4, accuracy=75.0,
                            mcc=0.1114, counts=ConfusionCounts(2, 1, 1, 0))
        line = report.to_record()
        assert "split=test" in line and "accuracy=75.000" in line
        assert "mcc=0.11140" in line