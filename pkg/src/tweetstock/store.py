"""Single-file indexed sample container.

Building the store resolves every tweet-day embedding once and inlines it, so
batch iteration afterwards touches no raw source files. Layout (all little
endian): magic ``STKF`` | u32 version | u32 embed_dim | three u64 split
counts | one u64 file offset per record (train, then val, then test) |
records. Payload matrices are float32 on disk and promoted to float64 for
compute.
"""

from __future__ import annotations

import datetime as dt
import mmap
import struct
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .data import PRICE_DIM, SPLITS, WINDOW, Sample
from .embeddings import EmbeddingCache, resolve_day

STORE_MAGIC = b"STKF"
STORE_VERSION = 1


class StoreFormatError(ValueError):
    """Store file is malformed, truncated, or of an unsupported version."""


@dataclass
class StoreRecord:
    """A sample with its embedding vectors resolved and inlined."""

    stock: str
    target_date: dt.date
    label: int
    movement_pct: float
    aux_labels: np.ndarray      # uint8 [5]
    tweet_days: Tuple[dt.date, ...]
    tweet_present: np.ndarray   # uint8 [5]
    price_feats: np.ndarray     # float32 [5, PRICE_DIM]
    text: np.ndarray            # float32 [5, embed_dim]

    def __eq__(self, other) -> bool:
        return (isinstance(other, StoreRecord)
                and self.stock == other.stock
                and self.target_date == other.target_date
                and self.label == other.label
                and self.movement_pct == other.movement_pct
                and np.array_equal(self.aux_labels, other.aux_labels)
                and self.tweet_days == other.tweet_days
                and np.array_equal(self.tweet_present, other.tweet_present)
                and np.array_equal(self.price_feats, other.price_feats)
                and np.array_equal(self.text, other.text))


@dataclass
class Batch:
    price: np.ndarray   # float64 [B, 5, PRICE_DIM]
    text: np.ndarray    # float64 [B, 5, embed_dim]
    y: np.ndarray       # float64 [B]
    aux: np.ndarray     # float64 [B, 5]

    def __len__(self) -> int:
        return self.price.shape[0]


def encode_record(rec: StoreRecord, embed_dim: int) -> bytes:
    ticker = rec.stock.encode("utf-8")
    parts = [
        struct.pack("<I", len(ticker)), ticker,
        struct.pack("<IBf", rec.target_date.toordinal(), rec.label, rec.movement_pct),
        np.ascontiguousarray(rec.aux_labels, dtype=np.uint8).tobytes(),
        struct.pack("<5I", *(d.toordinal() for d in rec.tweet_days)),
        np.ascontiguousarray(rec.tweet_present, dtype=np.uint8).tobytes(),
        np.ascontiguousarray(rec.price_feats, dtype="<f4").tobytes(),
        np.ascontiguousarray(rec.text, dtype="<f4").tobytes(),
    ]
    blob = b"".join(parts)
    expected = 4 + len(ticker) + 9 + WINDOW + 20 + WINDOW + 4 * WINDOW * PRICE_DIM \
        + 4 * WINDOW * embed_dim
    assert len(blob) == expected
    return blob


def decode_record(buf: memoryview, offset: int, embed_dim: int) -> StoreRecord:
    (tlen,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    stock = bytes(buf[offset:offset + tlen]).decode("utf-8")
    offset += tlen
    ordinal, label, movement_pct = struct.unpack_from("<IBf", buf, offset)
    offset += 9
    aux = np.frombuffer(buf, dtype=np.uint8, count=WINDOW, offset=offset).copy()
    offset += WINDOW
    day_ordinals = struct.unpack_from("<5I", buf, offset)
    offset += 20
    present = np.frombuffer(buf, dtype=np.uint8, count=WINDOW, offset=offset).copy()
    offset += WINDOW
    feats = np.frombuffer(buf, dtype="<f4", count=WINDOW * PRICE_DIM, offset=offset)
    feats = feats.reshape(WINDOW, PRICE_DIM).copy()
    offset += 4 * WINDOW * PRICE_DIM
    text = np.frombuffer(buf, dtype="<f4", count=WINDOW * embed_dim, offset=offset)
    text = text.reshape(WINDOW, embed_dim).copy()
    return StoreRecord(
        stock=stock,
        target_date=dt.date.fromordinal(ordinal),
        label=label,
        movement_pct=movement_pct,
        aux_labels=aux,
        tweet_days=tuple(dt.date.fromordinal(o) for o in day_ordinals),
        tweet_present=present,
        price_feats=feats,
        text=text,
    )


def resolve_sample(sample: Sample, cache: EmbeddingCache) -> StoreRecord:
    """Inline the cache vectors for a sample's five tweet days."""
    vectors = np.zeros((WINDOW, cache.dim), dtype=np.float32)
    present = np.zeros(WINDOW, dtype=np.uint8)
    for i, day in enumerate(sample.tweet_days):
        vec, hit = resolve_day(cache, sample.stock, day)
        vectors[i] = vec
        present[i] = 1 if hit else 0
    return StoreRecord(
        stock=sample.stock,
        target_date=sample.target_date,
        label=sample.label,
        movement_pct=np.float32(sample.movement_pct),
        aux_labels=np.asarray(sample.aux_labels, dtype=np.uint8),
        tweet_days=tuple(sample.tweet_days),
        tweet_present=present,
        price_feats=np.asarray(sample.price_feats, dtype=np.float32),
        text=vectors,
    )


@dataclass
class StoreSummary:
    counts: Dict[str, int]
    embed_dim: int
    path: str

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def build_sample_store(samples: Dict[str, List[Sample]], cache: EmbeddingCache,
                       path, embed_dim: Optional[int] = None) -> StoreSummary:
    """Write all samples plus resolved embeddings into one indexed file."""
    if embed_dim is not None and embed_dim != cache.dim:
        raise ValueError(f"cache dim {cache.dim} does not match requested {embed_dim}")
    dim = cache.dim
    blobs: List[bytes] = []
    counts = {name: len(samples.get(name, [])) for name in SPLITS}
    for split in SPLITS:
        for sample in samples.get(split, []):
            blobs.append(encode_record(resolve_sample(sample, cache), dim))
    header_size = 4 + 4 + 4 + 8 * len(SPLITS) + 8 * len(blobs)
    offsets = []
    cursor = header_size
    for blob in blobs:
        offsets.append(cursor)
        cursor += len(blob)
    with open(path, "wb") as out:
        out.write(STORE_MAGIC)
        out.write(struct.pack("<II", STORE_VERSION, dim))
        out.write(struct.pack(f"<{len(SPLITS)}Q", *(counts[s] for s in SPLITS)))
        if offsets:
            out.write(struct.pack(f"<{len(offsets)}Q", *offsets))
        for blob in blobs:
            out.write(blob)
    return StoreSummary(counts=counts, embed_dim=dim, path=str(path))


class SampleStore:
    """Read-only view of a store file; safe for any number of readers."""

    def __init__(self, path):
        self.path = str(path)
        with open(path, "rb") as f:
            head = f.read(4)
            if head != STORE_MAGIC:
                raise StoreFormatError(f"{path}: not a sample store (bad magic)")
            version, dim = struct.unpack("<II", f.read(8))
            if version != STORE_VERSION:
                raise StoreFormatError(f"{path}: unsupported store version {version}")
            self.embed_dim = dim
            raw_counts = struct.unpack(f"<{len(SPLITS)}Q", f.read(8 * len(SPLITS)))
            self.counts = dict(zip(SPLITS, raw_counts))
            total = sum(raw_counts)
            self._offsets = struct.unpack(f"<{total}Q", f.read(8 * total)) if total else ()
            self._file = open(path, "rb")
            self._mmap = mmap.mmap(self._file.fileno(), 0, access=mmap.ACCESS_READ)
            self._view = memoryview(self._mmap)
        starts = {}
        cursor = 0
        for name in SPLITS:
            starts[name] = cursor
            cursor += self.counts[name]
        self._split_start = starts

    def close(self) -> None:
        self._view.release()
        self._mmap.close()
        self._file.close()

    def __enter__(self) -> "SampleStore":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()

    def split_size(self, split: str) -> int:
        if split not in self.counts:
            raise KeyError(f"unknown split {split!r}, expected one of {SPLITS}")
        return self.counts[split]

    def get(self, split: str, index: int) -> StoreRecord:
        n = self.split_size(split)
        if not 0 <= index < n:
            raise IndexError(f"{split}[{index}] out of range (size {n})")
        return decode_record(self._view, self._offsets[self._split_start[split] + index],
                             self.embed_dim)


def iterate_batches(store: SampleStore, split: str, batch_size: int,
                    shuffle_seed: Optional[int] = None) -> Iterator[Batch]:
    """Yield every sample of a split exactly once, in store order unless a
    shuffle seed is given; the final short batch is emitted."""
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    n = store.split_size(split)
    order = np.arange(n)
    if shuffle_seed is not None:
        np.random.default_rng(shuffle_seed).shuffle(order)
    for start in range(0, n, batch_size):
        indices = order[start:start + batch_size]
        records = [store.get(split, int(i)) for i in indices]
        yield Batch(
            price=np.stack([r.price_feats for r in records]).astype(np.float64),
            text=np.stack([r.text for r in records]).astype(np.float64),
            y=np.array([r.label for r in records], dtype=np.float64),
            aux=np.stack([r.aux_labels for r in records]).astype(np.float64),
        )
