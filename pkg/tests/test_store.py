"""Sample store: build, round-trip, batch iteration, self-containment."""

import datetime as dt
import hashlib

import numpy as np
import pytest

from tweetstock import store as S
from tweetstock.data import SplitSpec, generate_samples
from tweetstock.embeddings import EmbeddingCache
from tweetstock.store import (
    SampleStore, StoreFormatError, build_sample_store, decode_record,
    encode_record, iterate_batches, resolve_sample,
)

from conftest import make_price_days, random_walk_prices


def small_split():
    return SplitSpec(train_start=dt.date(2014, 1, 1), train_end=dt.date(2014, 3, 1),
                     val_end=dt.date(2014, 3, 15), test_end=dt.date(2014, 4, 1))


@pytest.fixture
def corpus(rng):
    prices = {f"S{i}": random_walk_prices(rng, f"S{i}", 80) for i in range(3)}
    samples = generate_samples(prices, split=small_split())
    cache = EmbeddingCache(dim=12)
    for ticker, days in prices.items():
        for d in days:
            if rng.random() < 0.7:
                cache.put(ticker, d.date, rng.normal(size=12))
    return prices, samples, cache


class TestBuild:
    def test_counts_conserved(self, corpus, tmp_path):
        _, samples, cache = corpus
        summary = build_sample_store(samples, cache, tmp_path / "s.bin")
        for name in ("train", "val", "test"):
            assert summary.counts[name] == len(samples[name])
        assert summary.total == sum(len(v) for v in samples.values())

    def test_two_builds_byte_identical(self, corpus, tmp_path):
        _, samples, cache = corpus
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        build_sample_store(samples, cache, a)
        build_sample_store(samples, cache, b)
        assert hashlib.sha256(a.read_bytes()).hexdigest() \
            == hashlib.sha256(b.read_bytes()).hexdigest()

    def test_dim_mismatch_rejected(self, corpus, tmp_path):
        _, samples, cache = corpus
        with pytest.raises(ValueError, match="dim"):
            build_sample_store(samples, cache, tmp_path / "s.bin", embed_dim=768)

    def test_reopen_matches_build(self, corpus, tmp_path):
        _, samples, cache = corpus
        path = tmp_path / "s.bin"
        summary = build_sample_store(samples, cache, path)
        with SampleStore(path) as store:
            assert store.counts == summary.counts
            assert store.embed_dim == 12

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.bin"
        path.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(StoreFormatError):
            SampleStore(path)


class TestRecordRoundTrip:
    def test_encode_decode_exact(self, corpus):
        _, samples, cache = corpus
        for split in ("train", "val", "test"):
            for sample in samples[split][:20]:
                rec = resolve_sample(sample, cache)
                blob = encode_record(rec, cache.dim)
                back = decode_record(memoryview(blob), 0, cache.dim)
                assert back == rec

    def test_absent_days_zero_with_flag(self):
        prices = {"X": make_price_days("X", [10.0] * 6 + [10.2])}
        samples = generate_samples(prices, split=SplitSpec())
        sample = samples["train"][0]
        cache = EmbeddingCache(dim=4)
        cache.put("X", sample.tweet_days[0], np.ones(4))
        rec = resolve_sample(sample, cache)
        np.testing.assert_array_equal(rec.tweet_present, [1, 0, 0, 0, 0])
        np.testing.assert_array_equal(rec.text[0], np.ones(4))
        np.testing.assert_array_equal(rec.text[1:], np.zeros((4, 4)))


class TestIterateBatches:
    def build(self, corpus, tmp_path):
        _, samples, cache = corpus
        path = tmp_path / "s.bin"
        build_sample_store(samples, cache, path)
        return SampleStore(path), samples

    def test_partition_sizes(self, corpus, tmp_path):
        store, samples = self.build(corpus, tmp_path)
        n = store.split_size("train")
        batch_size = 4
        sizes = [len(b) for b in iterate_batches(store, "train", batch_size)]
        assert sum(sizes) == n
        assert all(s == batch_size for s in sizes[:-1])
        assert 0 < sizes[-1] <= batch_size

    def test_ten_samples_batch_four(self, rng, tmp_path):
        prices = {"A": random_walk_prices(rng, "A", 60)}
        split = SplitSpec(train_start=dt.date(2014, 1, 1), train_end=dt.date(2014, 6, 1),
                          val_end=dt.date(2014, 7, 1), test_end=dt.date(2014, 8, 1))
        samples = generate_samples(prices, split=split)
        samples["train"] = samples["train"][:10]
        cache = EmbeddingCache(dim=4)
        path = tmp_path / "ten.bin"
        build_sample_store(samples, cache, path)
        with SampleStore(path) as store:
            sizes = [len(b) for b in iterate_batches(store, "train", 4)]
        assert sizes == [4, 4, 2]

    def test_same_seed_same_order(self, corpus, tmp_path):
        store, _ = self.build(corpus, tmp_path)
        a = [b.y.tobytes() for b in iterate_batches(store, "train", 8, shuffle_seed=7)]
        b = [b.y.tobytes() for b in iterate_batches(store, "train", 8, shuffle_seed=7)]
        assert a == b

    def test_no_seed_means_store_order(self, corpus, tmp_path):
        store, samples = self.build(corpus, tmp_path)
        labels = np.concatenate([b.y for b in iterate_batches(store, "train", 8)])
        expected = np.array([s.label for s in samples["train"]], dtype=np.float64)
        np.testing.assert_array_equal(labels, expected)

    def test_each_sample_exactly_once_when_shuffled(self, corpus, tmp_path):
        store, _ = self.build(corpus, tmp_path)
        n = store.split_size("train")
        seen = np.concatenate([b.price[:, 0, 0] for b in
                               iterate_batches(store, "train", 8, shuffle_seed=3)])
        base = np.concatenate([b.price[:, 0, 0] for b in iterate_batches(store, "train", 8)])
        assert len(seen) == n
        np.testing.assert_array_equal(np.sort(seen), np.sort(base))

    def test_unknown_split_rejected(self, corpus, tmp_path):
        store, _ = self.build(corpus, tmp_path)
        with pytest.raises(KeyError):
            list(iterate_batches(store, "holdout", 4))

    def test_batch_dtypes_promoted(self, corpus, tmp_path):
        store, _ = self.build(corpus, tmp_path)
        batch = next(iterate_batches(store, "train", 4))
        assert batch.price.dtype == np.float64
        assert batch.text.dtype == np.float64
        assert batch.y.dtype == np.float64
        assert batch.aux.dtype == np.float64
        assert batch.price.shape[1:] == (5, 6)
        assert batch.text.shape[1:] == (5, 12)

    def test_iteration_survives_source_deletion(self, rng, tmp_path):
        # build from files on disk, delete them, then iterate
        from tweetstock.data import parse_price_csv
        from conftest import write_price_csv
        prices_dir = tmp_path / "prices"
        prices_dir.mkdir()
        days = random_walk_prices(rng, "GONE", 90)
        csv_path = write_price_csv(prices_dir, "GONE", days)
        parsed = {"GONE": parse_price_csv(csv_path)}
        samples = generate_samples(parsed, split=small_split())
        cache = EmbeddingCache(dim=4)
        path = tmp_path / "s.bin"
        build_sample_store(samples, cache, path)
        csv_path.unlink()
        with SampleStore(path) as store:
            count = 0
            batches = 0
            epoch = 0
            while batches < 1000:  # a thousand batches, zero raw-file reads
                epoch += 1
                for batch in iterate_batches(store, "train", 16, shuffle_seed=epoch):
                    count += len(batch)
                    batches += 1
        assert count == epoch * store.split_size("train")
