"""StockNet-format ingestion and sample generation.

Price files are one CSV per ticker (`Date,Open,High,Low,Close,Adj Close,Volume`);
tweets are JSON-lines files grouped in one directory per ticker. A sample pairs
a 5-day feature window with the movement label of the following trading day.
"""

from __future__ import annotations

import bisect
import csv
import datetime as dt
import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .embeddings import EmbeddingCache, average_day_embeddings

log = logging.getLogger(__name__)

PRICE_HEADER = ["Date", "Open", "High", "Low", "Close", "Adj Close", "Volume"]
WINDOW = 5          # input lag: trading days d-5 .. d-1
PRICE_DIM = 6       # five relative prices + log volume ratio
POSITIVE_THRESHOLD = 0.55   # percent; movement >= this is a positive target
NEGATIVE_THRESHOLD = -0.5   # percent; movement < this is a negative target
SPLITS = ("train", "val", "test")


class ParseError(ValueError):
    """A source file is malformed beyond tolerant recovery."""


class DataIntegrityError(ValueError):
    """Parsed values violate a price-series invariant."""


class AlignmentError(ValueError):
    """A feature window is not consecutive in the stock's trading calendar."""


@dataclass(frozen=True)
class PriceDay:
    stock: str
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: float

    def validate(self) -> None:
        fields = (self.open, self.high, self.low, self.close, self.adj_close, self.volume)
        if not all(np.isfinite(v) for v in fields):
            raise DataIntegrityError(f"{self.stock} {self.date}: non-finite price field")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise DataIntegrityError(
                f"{self.stock} {self.date}: high/low do not bracket open/close")
        if self.adj_close <= 0:
            raise DataIntegrityError(f"{self.stock} {self.date}: adjusted close must be > 0")
        if self.volume < 0:
            raise DataIntegrityError(f"{self.stock} {self.date}: negative volume")


@dataclass(frozen=True)
class TweetRecord:
    date: dt.date
    text: str
    tweet_id: str


@dataclass
class TweetParseResult:
    records: List[TweetRecord]
    skipped: int


class Movement(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    DISCARD = "discard"


@dataclass(frozen=True)
class SplitSpec:
    """Date-based split boundaries, all ranges half-open [start, end)."""

    train_start: dt.date = dt.date(2014, 1, 1)
    train_end: dt.date = dt.date(2015, 8, 1)
    val_end: dt.date = dt.date(2015, 10, 1)
    test_end: dt.date = dt.date(2016, 1, 1)

    def __post_init__(self):
        bounds = (self.train_start, self.train_end, self.val_end, self.test_end)
        if not all(a < b for a, b in zip(bounds, bounds[1:])):
            raise ValueError(f"split boundaries must be strictly increasing: {bounds}")

    def assign(self, day: dt.date) -> Optional[str]:
        if self.train_start <= day < self.train_end:
            return "train"
        if self.train_end <= day < self.val_end:
            return "val"
        if self.val_end <= day < self.test_end:
            return "test"
        return None


@dataclass
class Sample:
    """One (stock, target day) instance.

    ``price_feats`` covers trading days d-5..d-1; ``tweet_days`` are those
    days' calendar dates (embedding cache keys). ``aux_labels[t]`` is the raw
    movement sign of day d-4+t, i.e. one step ahead of input position t, so
    index 4 is the target day itself and always equals ``label``.
    """

    stock: str
    target_date: dt.date
    price_feats: np.ndarray            # float32 [5, 6]
    tweet_days: Tuple[dt.date, ...]    # 5 calendar dates
    label: int
    aux_labels: np.ndarray             # uint8 [5]
    movement_pct: float

    def __eq__(self, other) -> bool:
        return (isinstance(other, Sample)
                and self.stock == other.stock
                and self.target_date == other.target_date
                and np.array_equal(self.price_feats, other.price_feats)
                and self.tweet_days == other.tweet_days
                and self.label == other.label
                and np.array_equal(self.aux_labels, other.aux_labels)
                and self.movement_pct == other.movement_pct)


def parse_price_csv(path) -> List[PriceDay]:
    """Parse one ticker's price CSV; rows come back sorted ascending by date."""
    path = Path(path)
    stock = path.stem.upper()
    rows: List[PriceDay] = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, expected header {PRICE_HEADER}")
        if [h.strip() for h in header] != PRICE_HEADER:
            raise ParseError(f"{path}: unexpected header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 7:
                raise ParseError(f"{path}:{lineno}: expected 7 fields, got {len(row)}")
            try:
                day = PriceDay(
                    stock=stock,
                    date=dt.date.fromisoformat(row[0].strip()),
                    open=float(row[1]), high=float(row[2]), low=float(row[3]),
                    close=float(row[4]), adj_close=float(row[5]), volume=float(row[6]),
                )
            except (ValueError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            day.validate()
            rows.append(day)
    rows.sort(key=lambda d: d.date)
    for prev, cur in zip(rows, rows[1:]):
        if prev.date == cur.date:
            raise DataIntegrityError(f"{path}: duplicate date {cur.date}")
    return rows


def _parse_timestamp(value: str) -> dt.date:
    text = value.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    stamp = dt.datetime.fromisoformat(text)
    if stamp.tzinfo is not None:
        stamp = stamp.astimezone(dt.timezone.utc)
    return stamp.date()


def parse_tweet_file(path) -> TweetParseResult:
    """Parse a JSON-lines tweet file tolerantly.

    Unparseable lines are skipped and counted; a file with no parseable line
    at all raises.
    """
    path = Path(path)
    records: List[TweetRecord] = []
    skipped = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                text = obj["text"]
                day = _parse_timestamp(obj["created_at"])
            except (json.JSONDecodeError, KeyError, ValueError, TypeError):
                skipped += 1
                log.warning("%s:%d: skipping unparseable tweet line", path, lineno)
                continue
            tweet_id = str(obj.get("id_str") or obj.get("id") or f"{path.name}:{lineno}")
            records.append(TweetRecord(date=day, text=str(text), tweet_id=tweet_id))
    if not records:
        raise ParseError(f"{path}: no parseable tweet lines")
    return TweetParseResult(records=records, skipped=skipped)


def price_features(window: Sequence[PriceDay]) -> np.ndarray:
    """Feature matrix [5, 6] for the last five days of a 6-day window.

    Row for day t: open/high/low/close/adj_close each divided by the previous
    day's adjusted close minus 1, then ln(volume_t / volume_{t-1}) with
    volume floored at 1.
    """
    if len(window) != 6:
        raise AlignmentError(f"price_features needs 6 consecutive days, got {len(window)}")
    if len({d.stock for d in window}) != 1:
        raise AlignmentError("price_features window mixes stocks")
    for prev, cur in zip(window, window[1:]):
        if cur.date <= prev.date:
            raise AlignmentError(
                f"{cur.stock}: window days {prev.date} -> {cur.date} not ascending")
    out = np.empty((WINDOW, PRICE_DIM), dtype=np.float64)
    for i in range(1, 6):
        prev, cur = window[i - 1], window[i]
        base = prev.adj_close
        out[i - 1, 0] = cur.open / base - 1.0
        out[i - 1, 1] = cur.high / base - 1.0
        out[i - 1, 2] = cur.low / base - 1.0
        out[i - 1, 3] = cur.close / base - 1.0
        out[i - 1, 4] = cur.adj_close / base - 1.0
        out[i - 1, 5] = np.log(max(cur.volume, 1.0) / max(prev.volume, 1.0))
    return out


def label_movement(prev_adj: float, cur_adj: float) -> Tuple[Movement, float]:
    """Classify the close-to-close movement percentage against the thresholds.

    Thresholds are compared via scaled multiplication (cur*10000 vs
    prev*10055, cur*1000 vs prev*995) so exact decimal boundaries like a
    -0.5% move are not pushed across the line by division rounding.
    """
    if prev_adj <= 0:
        raise ValueError(f"previous adjusted close must be > 0, got {prev_adj}")
    pct = 100.0 * (cur_adj / prev_adj - 1.0)
    if cur_adj * 10000.0 >= prev_adj * 10055.0:
        return Movement.POSITIVE, pct
    if cur_adj * 1000.0 < prev_adj * 995.0:
        return Movement.NEGATIVE, pct
    return Movement.DISCARD, pct


def next_trading_day_index(trading_days: Sequence[dt.date], day: dt.date) -> Optional[int]:
    """Index of the first trading day >= day, or None past the calendar end."""
    i = bisect.bisect_left(trading_days, day)
    return i if i < len(trading_days) else None


def tweet_presence(tweets: Iterable[TweetRecord],
                   trading_days: Sequence[dt.date]) -> Dict[dt.date, int]:
    """Count tweets per trading day, attributing non-trading calendar days to
    the next trading day."""
    counts: Dict[dt.date, int] = {}
    for rec in tweets:
        i = next_trading_day_index(trading_days, rec.date)
        if i is None:
            continue
        counts[trading_days[i]] = counts.get(trading_days[i], 0) + 1
    return counts


def align_cache_to_trading_days(cache: EmbeddingCache,
                                calendars: Dict[str, Sequence[dt.date]]) -> EmbeddingCache:
    """Remap cache keys from raw tweet calendar dates to each stock's trading
    days (weekend/holiday vectors merge into the next trading day by mean)."""
    grouped: Dict[Tuple[str, dt.date], List[np.ndarray]] = {}
    for (ticker, day), vec in sorted(cache.entries.items()):
        days = calendars.get(ticker)
        if not days:
            continue
        i = next_trading_day_index(days, day)
        if i is None:
            continue
        grouped.setdefault((ticker, days[i]), []).append(vec)
    aligned = EmbeddingCache(dim=cache.dim, source_tag=cache.source_tag)
    for (ticker, day), vectors in grouped.items():
        aligned.put(ticker, day, average_day_embeddings(vectors))
    return aligned


def generate_samples(prices: Dict[str, List[PriceDay]],
                     tweets: Optional[Dict[str, List[TweetRecord]]] = None,
                     split: SplitSpec = SplitSpec(),
                     require_tweets: bool = False) -> Dict[str, List[Sample]]:
    """Slide the 5-day window over each stock's trading calendar.

    A target day needs 6 prior trading days (the feature matrix is relative
    to each day's predecessor). Targets inside the discard band are dropped;
    auxiliary labels keep the raw movement sign with no discard band. With
    ``require_tweets``, windows whose five days all lack tweets are dropped.
    """
    tweets = tweets or {}
    out: Dict[str, List[Sample]] = {name: [] for name in SPLITS}
    for ticker in sorted(prices):
        days = prices[ticker]
        calendar = [d.date for d in days]
        presence = tweet_presence(tweets.get(ticker, ()), calendar) if require_tweets else {}
        for i in range(6, len(days)):
            split_name = split.assign(days[i].date)
            if split_name is None:
                continue
            movement, pct = label_movement(days[i - 1].adj_close, days[i].adj_close)
            if movement is Movement.DISCARD:
                continue
            window_dates = tuple(calendar[i - WINDOW:i])
            if require_tweets and not any(presence.get(d) for d in window_dates):
                continue
            feats = price_features(days[i - 6:i]).astype(np.float32)
            aux = np.array(
                [int(days[u].adj_close > days[u - 1].adj_close) for u in range(i - 4, i + 1)],
                dtype=np.uint8)
            out[split_name].append(Sample(
                stock=ticker,
                target_date=days[i].date,
                price_feats=feats,
                tweet_days=window_dates,
                label=1 if movement is Movement.POSITIVE else 0,
                aux_labels=aux,
                movement_pct=float(np.float32(pct)),
            ))
    return out
