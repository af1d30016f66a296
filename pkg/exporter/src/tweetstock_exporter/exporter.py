"""Embed a tweet corpus once and write the `EMBC` cache file.

Walks one directory per ticker of JSON-lines tweet files, embeds every tweet
with the selected backend, averages the vectors per (ticker, calendar day),
and writes the cache atomically (temp file, then rename). The output is the
exact binary format the consuming toolkit reads; no code is shared with it.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import os
import re
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Tuple

import numpy as np

log = logging.getLogger(__name__)

CACHE_MAGIC = b"EMBC"
CACHE_VERSION = 1
STANDARD_DIM = 768

_USER_RE = re.compile(r"@\w+")
_URL_RE = re.compile(r"(?:https?://|www\.)\S+")


class ExportError(RuntimeError):
    """Export cannot proceed (model load failure, empty corpus, bad input)."""


def normalize_tweet(text: str) -> str:
    """Replace user handles and URLs with placeholder tokens."""
    text = _USER_RE.sub("@USER", text)
    text = _URL_RE.sub("HTTPURL", text)
    return " ".join(text.split())


class Encoder(Protocol):
    dim: int
    name: str

    def encode(self, texts: List[str]) -> np.ndarray: ...


class HashEncoder:
    """Deterministic per-text unit vectors; a model-free stand-in backend."""

    def __init__(self, dim: int = STANDARD_DIM):
        if dim < 1:
            raise ExportError(f"embedding dim must be >= 1, got {dim}")
        self.dim = dim
        self.name = f"hash-{dim}"

    def encode(self, texts: List[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(self.dim)
            out[i] = (vec / np.linalg.norm(vec)).astype(np.float32)
        return out


class TransformersEncoder:
    """Pretrained language model backend with mean-over-token pooling."""

    def __init__(self, model_id: str, max_length: int = 128):
        try:
            import torch  # noqa: F401
            from transformers import AutoModel, AutoTokenizer
            self.tokenizer = AutoTokenizer.from_pretrained(model_id)
            self.model = AutoModel.from_pretrained(model_id)
        except Exception as exc:
            raise ExportError(f"model load failure for {model_id!r}: {exc}") from exc
        self.model.eval()
        self.dim = int(self.model.config.hidden_size)
        self.name = model_id
        self.max_length = max_length

    def encode(self, texts: List[str]) -> np.ndarray:
        import torch

        with torch.no_grad():
            enc = self.tokenizer(texts, padding=True, truncation=True,
                                 max_length=self.max_length, return_tensors="pt")
            hidden = self.model(**enc).last_hidden_state
            mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
            pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)
        return pooled.cpu().numpy().astype(np.float32)


def resolve_encoder(model: str) -> Encoder:
    """``hash`` / ``hash-<dim>`` select the deterministic backend; anything
    else is treated as a pretrained model identifier."""
    if model == "hash":
        return HashEncoder()
    if model.startswith("hash-"):
        return HashEncoder(dim=int(model.split("-", 1)[1]))
    return TransformersEncoder(model)


@dataclass
class ExportJob:
    tweets_dir: Path
    output_path: Path
    model: str = "vinai/bertweet-base"
    batch_size: int = 32
    max_tweets_per_day: Optional[int] = None
    expected_dim: int = STANDARD_DIM

    def __post_init__(self):
        self.tweets_dir = Path(self.tweets_dir)
        self.output_path = Path(self.output_path)
        if self.batch_size < 1:
            raise ExportError(f"batch size must be >= 1, got {self.batch_size}")
        if self.max_tweets_per_day is not None and self.max_tweets_per_day < 1:
            raise ExportError("max tweets per day must be >= 1 when set")


@dataclass
class ExportSummary:
    days_embedded: int
    tweets_processed: int
    tickers: int
    skipped_lines: int
    dim: int


def _parse_date(value: str) -> dt.date:
    text = value.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    stamp = dt.datetime.fromisoformat(text)
    if stamp.tzinfo is not None:
        stamp = stamp.astimezone(dt.timezone.utc)
    return stamp.date()


def collect_tweets(tweets_dir: Path) -> Tuple[Dict[Tuple[str, dt.date], List[str]], int]:
    """Group tweet texts by (ticker, UTC calendar day), tolerating bad lines."""
    grouped: Dict[Tuple[str, dt.date], List[str]] = {}
    skipped = 0
    if not tweets_dir.is_dir():
        raise ExportError(f"tweets directory not found: {tweets_dir}")
    for tick_dir in sorted(p for p in tweets_dir.iterdir() if p.is_dir()):
        ticker = tick_dir.name.upper()
        for path in sorted(p for p in tick_dir.iterdir() if p.is_file()):
            with open(path, encoding="utf-8") as f:
                for lineno, line in enumerate(f, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        obj = json.loads(line)
                        day = _parse_date(obj["created_at"])
                        text = str(obj["text"])
                    except (json.JSONDecodeError, KeyError, ValueError, TypeError):
                        skipped += 1
                        log.warning("%s:%d: skipping unparseable line", path, lineno)
                        continue
                    grouped.setdefault((ticker, day), []).append(text)
    return grouped, skipped


def _write_atomic(entries: Dict[Tuple[str, dt.date], np.ndarray], dim: int,
                  source_tag: str, output_path: Path) -> None:
    output_path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_name = tempfile.mkstemp(dir=output_path.parent,
                                     prefix=output_path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as out:
            out.write(CACHE_MAGIC)
            out.write(struct.pack("<II", CACHE_VERSION, dim))
            tag = source_tag.encode("utf-8")
            out.write(struct.pack("<I", len(tag)))
            out.write(tag)
            items = sorted(entries.items())
            out.write(struct.pack("<Q", len(items)))
            for (ticker, day), vec in items:
                raw = ticker.encode("utf-8")
                out.write(struct.pack("<I", len(raw)))
                out.write(raw)
                out.write(struct.pack("<I", day.toordinal()))
                out.write(np.ascontiguousarray(vec, dtype="<f4").tobytes())
        os.replace(temp_name, output_path)
    except BaseException:
        try:
            os.unlink(temp_name)
        except FileNotFoundError:
            pass
        raise


def export_embeddings(job: ExportJob, encoder: Optional[Encoder] = None) -> ExportSummary:
    """Embed every tweet, average per (ticker, day), write the cache file.

    Deterministic for a fixed backend and input set: days are processed in
    sorted order and an optional per-day cap keeps the first tweets in file
    order.
    """
    if encoder is None:
        encoder = resolve_encoder(job.model)
    if encoder.dim != job.expected_dim:
        raise ExportError(f"encoder dim {encoder.dim} does not match the expected "
                          f"cache dim {job.expected_dim}")
    grouped, skipped = collect_tweets(job.tweets_dir)
    if not grouped:
        raise ExportError(f"no parseable tweets under {job.tweets_dir}")
    entries: Dict[Tuple[str, dt.date], np.ndarray] = {}
    tweets_processed = 0
    for key in sorted(grouped):
        texts = grouped[key]
        if job.max_tweets_per_day is not None:
            texts = texts[:job.max_tweets_per_day]
        normalized = [normalize_tweet(t) for t in texts]
        vectors = []
        for start in range(0, len(normalized), job.batch_size):
            vectors.append(encoder.encode(normalized[start:start + job.batch_size]))
        stacked = np.concatenate(vectors, axis=0)
        entries[key] = stacked.astype(np.float64).mean(axis=0).astype(np.float32)
        tweets_processed += len(normalized)
    source_tag = f"{encoder.name}+usr-url-norm"
    _write_atomic(entries, encoder.dim, source_tag, job.output_path)
    return ExportSummary(days_embedded=len(entries), tweets_processed=tweets_processed,
                         tickers=len({t for t, _ in entries}), skipped_lines=skipped,
                         dim=encoder.dim)
