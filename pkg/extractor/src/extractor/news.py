"""News ingestion and overnight windowing.

A headline released in (previous close 15:30, current open 09:30] belongs to
the current trading day: it is information a trader holds before that day's
open. Headlines released during trading hours fall in no window and are
dropped. Weekend and holiday-morning releases roll forward to the next
weekday.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, time, timedelta

log = logging.getLogger(__name__)

MARKET_OPEN = time(9, 30)
MARKET_CLOSE = time(15, 30)


class ExtractorError(ValueError):
    pass


def _normalize(text: str) -> str:
    # one headline per line: collapse internal line breaks and trim
    return " ".join(text.split())


@dataclass
class NewsDay:
    date: str                      # ISO trading date the window closes on
    headlines: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.headlines = [_normalize(h) for h in self.headlines if _normalize(h)]
        if not self.headlines:
            raise ExtractorError(f"{self.date}: news day with no usable headlines")


def assign_trading_day(ts: datetime) -> str | None:
    """Trading date whose overnight window contains ts, or None for intraday."""
    if ts.time() <= MARKET_OPEN:
        day = ts.date()
    elif ts.time() > MARKET_CLOSE:
        day = ts.date() + timedelta(days=1)
    else:
        return None
    while day.weekday() >= 5:
        day += timedelta(days=1)
    return day.isoformat()


def group_news_days(records) -> list[NewsDay]:
    """Group (timestamp, headline) records into NewsDay objects, sorted by date.

    Within a day headlines keep release order. Intraday records are dropped
    with a log line; they belong to no overnight window.
    """
    rows = []
    for i, (ts, headline) in enumerate(records):
        if not isinstance(ts, datetime):
            try:
                ts = datetime.fromisoformat(ts)
            except ValueError:
                raise ExtractorError(f"record {i}: bad timestamp {ts!r}")
        rows.append((ts, i, headline))
    rows.sort(key=lambda r: (r[0], r[1]))

    by_day: dict[str, list[str]] = {}
    dropped = 0
    for ts, _, headline in rows:
        day = assign_trading_day(ts)
        if day is None:
            dropped += 1
            continue
        text = _normalize(headline)
        if text:
            by_day.setdefault(day, []).append(text)
    if dropped:
        log.info("dropped %d intraday headline(s) outside every overnight window", dropped)
    return [NewsDay(date, heads) for date, heads in sorted(by_day.items())]


def load_news(path) -> list[NewsDay]:
    """Read JSONL records {"timestamp": ISO-8601, "headline": text}."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                records.append((rec["timestamp"], rec["headline"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ExtractorError(f"{path} line {line_no}: {exc}")
    if not records:
        raise ExtractorError(f"{path}: no news records")
    return group_news_days(records)
