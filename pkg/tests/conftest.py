"""Shared synthetic-corpus helpers."""

import datetime as dt
import json

import numpy as np
import pytest

from tweetstock.data import PriceDay


def make_price_days(ticker, adj_closes, start=dt.date(2014, 1, 6), volumes=None):
    """Price series with open/high/low/close pinned to adj_close and
    consecutive calendar dates (a dense trading calendar)."""
    days = []
    for i, adj in enumerate(adj_closes):
        vol = 1000.0 if volumes is None else float(volumes[i])
        days.append(PriceDay(
            stock=ticker, date=start + dt.timedelta(days=i),
            open=adj, high=adj, low=adj, close=adj, adj_close=adj, volume=vol,
        ))
    return days


def write_price_csv(directory, ticker, days):
    path = directory / f"{ticker}.csv"
    lines = ["Date,Open,High,Low,Close,Adj Close,Volume"]
    for d in days:
        lines.append(f"{d.date.isoformat()},{d.open},{d.high},{d.low},"
                     f"{d.close},{d.adj_close},{d.volume}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_tweet_file(directory, ticker, entries):
    """entries: list of (iso timestamp, text) pairs, one JSON line each."""
    tick_dir = directory / ticker
    tick_dir.mkdir(parents=True, exist_ok=True)
    path = tick_dir / "tweets.jsonl"
    lines = [json.dumps({"text": text, "created_at": stamp}) for stamp, text in entries]
    path.write_text("\n".join(lines) + "\n")
    return path


def random_walk_prices(rng, ticker, n_days, start=dt.date(2014, 1, 6)):
    adj = 100.0 * np.exp(np.cumsum(rng.normal(0.0, 0.012, size=n_days)))
    volumes = rng.integers(500, 5000, size=n_days)
    return make_price_days(ticker, adj.tolist(), start=start, volumes=volumes)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_separable_samples(seed, n, dim, start=dt.date(2014, 2, 3),
                           signal=0.8, random_labels=False):
    """Samples whose text and price features carry a planted direction with
    sign equal to the label (or carry it independently of random labels)."""
    from tweetstock.data import Sample
    from tweetstock.embeddings import EmbeddingCache, pseudo_embed

    gen = np.random.default_rng(seed)
    direction = pseudo_embed("planted-direction", dim=dim, seed=0)
    cache = EmbeddingCache(dim=dim)
    samples = []
    for i in range(n):
        label = int(gen.random() < 0.5)
        sign = 2.0 * label - 1.0
        if random_labels:
            sign = 2.0 * float(gen.random() < 0.5) - 1.0  # decoupled from label
        ticker = f"P{i}"
        days = tuple(start + dt.timedelta(days=j) for j in range(5))
        for j, day in enumerate(days):
            noise = gen.normal(scale=0.05, size=dim)
            cache.put(ticker, day, noise + sign * signal * direction)
        price = gen.normal(scale=0.01, size=(5, 6))
        price[4, :] += sign * 0.3
        samples.append(Sample(
            stock=ticker,
            target_date=days[-1] + dt.timedelta(days=1),
            price_feats=price.astype(np.float32),
            tweet_days=days,
            label=label,
            aux_labels=np.full(5, label, dtype=np.uint8),
            movement_pct=sign,
        ))
    return samples, cache


def separable_store(tmp_path, seed, n_train=200, n_val=40, n_test=40, dim=8,
                    random_labels=False, name=None):
    from tweetstock.store import SampleStore, build_sample_store

    total = n_train + n_val + n_test
    samples, cache = make_separable_samples(seed, total, dim,
                                            random_labels=random_labels)
    split = {
        "train": samples[:n_train],
        "val": samples[n_train:n_train + n_val],
        "test": samples[n_train + n_val:],
    }
    path = tmp_path / (name or f"separable-{seed}-{random_labels}.bin")
    build_sample_store(split, cache, path)
    return SampleStore(path)
