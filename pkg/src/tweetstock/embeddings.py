"""File-backed per-(ticker, day) tweet embedding cache.

Vectors are stored as little-endian float32; lookups return float64. A
deterministic hash-based pseudo embedder stands in for the real language
model so the pipeline never needs pretrained weights.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np

CACHE_MAGIC = b"EMBC"
CACHE_VERSION = 1
DEFAULT_DIM = 768

CacheKey = Tuple[str, dt.date]


class CacheFormatError(ValueError):
    """Cache file is malformed, truncated, or of an unsupported version."""


@dataclass
class EmbeddingCache:
    """Map from (ticker, calendar date) to a fixed-dimension vector."""

    dim: int = DEFAULT_DIM
    entries: Dict[CacheKey, np.ndarray] = field(default_factory=dict)
    source_tag: str = ""

    def put(self, ticker: str, day: dt.date, vector: np.ndarray) -> None:
        vec = np.asarray(vector, dtype=np.float32)
        if vec.shape != (self.dim,):
            raise ValueError(f"vector shape {vec.shape} does not match cache dim {self.dim}")
        if not np.isfinite(vec).all():
            raise ValueError(f"non-finite embedding for ({ticker}, {day})")
        self.entries[(ticker, day)] = vec

    def __len__(self) -> int:
        return len(self.entries)


def average_day_embeddings(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Arithmetic mean per coordinate of a nonempty list of equal-length vectors."""
    if len(vectors) == 0:
        raise ValueError("cannot average an empty list of embeddings")
    stacked = np.stack([np.asarray(v, dtype=np.float64) for v in vectors])
    if stacked.ndim != 2:
        raise ValueError("embeddings must be 1-D vectors of uniform length")
    return stacked.mean(axis=0)


def pseudo_embed(text: str, dim: int = DEFAULT_DIM, seed: int = 0) -> np.ndarray:
    """Deterministic unit-norm vector derived from (hash of text, seed).

    Identical text always maps to the identical vector; distinct texts land
    nearly orthogonal at realistic dimensions.
    """
    if dim < 1:
        raise ValueError(f"embedding dim must be >= 1, got {dim}")
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    material = int.from_bytes(digest, "little")
    rng = np.random.default_rng([material, seed & 0xFFFFFFFF])
    vec = rng.standard_normal(dim)
    norm = np.linalg.norm(vec)
    if norm == 0.0:  # unreachable for standard normal draws, defensive
        vec[0] = 1.0
        norm = 1.0
    return vec / norm


def resolve_day(cache: EmbeddingCache, ticker: str, day: dt.date) -> Tuple[np.ndarray, bool]:
    """Cached vector with present=True, else a zero vector with present=False."""
    vec = cache.entries.get((ticker, day))
    if vec is None:
        return np.zeros(cache.dim, dtype=np.float32), False
    return vec, True


def _write_str(out, s: str) -> None:
    raw = s.encode("utf-8")
    out.write(struct.pack("<I", len(raw)))
    out.write(raw)


def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CacheFormatError("truncated cache file")
    return buf


def _read_str(f) -> str:
    (n,) = struct.unpack("<I", _read_exact(f, 4))
    return _read_exact(f, n).decode("utf-8")


def write_cache(cache: EmbeddingCache, path) -> None:
    """Serialize the cache; entries are sorted so identical caches produce
    byte-identical files."""
    items = sorted(cache.entries.items(), key=lambda kv: (kv[0][0], kv[0][1]))
    with open(path, "wb") as out:
        out.write(CACHE_MAGIC)
        out.write(struct.pack("<II", CACHE_VERSION, cache.dim))
        _write_str(out, cache.source_tag)
        out.write(struct.pack("<Q", len(items)))
        for (ticker, day), vec in items:
            _write_str(out, ticker)
            out.write(struct.pack("<I", day.toordinal()))
            out.write(np.asarray(vec, dtype="<f4").tobytes())


def read_cache(path) -> EmbeddingCache:
    """Load a cache file; any structural defect raises, never a partial cache."""
    with open(path, "rb") as f:
        if _read_exact(f, 4) != CACHE_MAGIC:
            raise CacheFormatError(f"{path}: not an embedding cache (bad magic)")
        version, dim = struct.unpack("<II", _read_exact(f, 8))
        if version != CACHE_VERSION:
            raise CacheFormatError(f"{path}: unsupported cache version {version}")
        source_tag = _read_str(f)
        (count,) = struct.unpack("<Q", _read_exact(f, 8))
        entries: Dict[CacheKey, np.ndarray] = {}
        for _ in range(count):
            ticker = _read_str(f)
            (ordinal,) = struct.unpack("<I", _read_exact(f, 4))
            vec = np.frombuffer(_read_exact(f, 4 * dim), dtype="<f4").copy()
            entries[(ticker, dt.date.fromordinal(ordinal))] = vec
        if f.read(1):
            raise CacheFormatError(f"{path}: trailing bytes after declared entries")
    return EmbeddingCache(dim=dim, entries=entries, source_tag=source_tag)


def build_pseudo_cache(tweets_by_ticker: Dict[str, Iterable], dim: int = DEFAULT_DIM,
                       seed: int = 0) -> EmbeddingCache:
    """Embed every tweet with :func:`pseudo_embed` and average per (ticker, day).

    ``tweets_by_ticker`` maps ticker to an iterable of records with ``date``
    and ``text`` attributes (see ``data.TweetRecord``).
    """
    cache = EmbeddingCache(dim=dim, source_tag=f"pseudo-{dim}-seed{seed}")
    for ticker in sorted(tweets_by_ticker):
        by_day: Dict[dt.date, list] = {}
        for rec in tweets_by_ticker[ticker]:
            by_day.setdefault(rec.date, []).append(rec.text)
        for day in sorted(by_day):
            vectors = [pseudo_embed(text, dim=dim, seed=seed) for text in by_day[day]]
            cache.put(ticker, day, average_day_embeddings(vectors))
    return cache
