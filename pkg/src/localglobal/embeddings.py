"""Per-trading-day language-model output vectors: JSONL ingestion and lookup.

The vector stored under date t summarizes news whose release window closed at
09:30 of day t; looking up date t therefore never sees future information.
Values are stored as 32-bit floats on disk and widened to float64 in memory.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .panel import TradingCalendar

log = logging.getLogger(__name__)


class EmbeddingError(ValueError):
    pass


@dataclass
class EmbeddingSeries:
    calendar: TradingCalendar
    d_llm: int
    vectors: np.ndarray  # (T, d_llm) float64, widened from float32 storage
    provenance: str = ""

    def __post_init__(self):
        if self.vectors.shape != (len(self.calendar), self.d_llm):
            raise EmbeddingError(
                f"vectors shape {self.vectors.shape} != ({len(self.calendar)}, {self.d_llm})"
            )
        if not np.all(np.isfinite(self.vectors)):
            raise EmbeddingError("non-finite embedding entry")


def load_embeddings(path, policy: str = "error", calendar: TradingCalendar | None = None) -> EmbeddingSeries:
    """Read a JSONL embedding file.

    When a trading calendar is supplied, every calendar day must be present;
    missing days raise under policy='error' and become logged all-zero vectors
    under policy='zero-fill'. Without a calendar the file's dates define it.
    """
    if policy not in ("error", "zero-fill"):
        raise EmbeddingError(f"unknown missing-day policy {policy!r}")
    provenance = ""
    by_date: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "meta" in rec:
                if line_no != 1:
                    raise EmbeddingError(f"line {line_no}: meta record only allowed as first line")
                provenance = str(rec["meta"].get("provenance", ""))
                continue
            date, d = rec["date"], int(rec["dim"])
            vec = np.asarray(rec["vector"], dtype=np.float32).astype(np.float64)
            if dim is None:
                dim = d
            elif d != dim:
                raise EmbeddingError(f"line {line_no}: dimension {d} != {dim} seen earlier")
            if vec.shape != (d,):
                raise EmbeddingError(f"line {line_no}: vector length {vec.shape[0]} != dim {d}")
            if not np.all(np.isfinite(vec)):
                raise EmbeddingError(f"line {line_no}: non-finite entry")
            if date in by_date:
                raise EmbeddingError(f"line {line_no}: duplicate date {date}")
            by_date[date] = vec
    if dim is None:
        raise EmbeddingError(f"{path}: no embedding records")

    if calendar is None:
        calendar = TradingCalendar(tuple(sorted(by_date)))
    vectors = np.zeros((len(calendar), dim), dtype=np.float64)
    for t, date in enumerate(calendar.dates):
        if date in by_date:
            vectors[t] = by_date[date]
        elif policy == "error":
            raise EmbeddingError(f"missing embedding for trading day {date}")
        else:
            log.warning("missing embedding for %s, zero-filled", date)
    return EmbeddingSeries(calendar, dim, vectors, provenance)


def save_embeddings(series: EmbeddingSeries, path) -> None:
    """Write the JSONL format (float32 values, sorted by date, meta line first)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"meta": {"provenance": series.provenance}}) + "\n")
        for t, date in enumerate(series.calendar.dates):
            vec = [float(np.float32(v)) for v in series.vectors[t]]
            fh.write(json.dumps({"date": date, "dim": series.d_llm, "vector": vec}) + "\n")


def vector_for_prediction(series: EmbeddingSeries, t: str) -> np.ndarray:
    """Vector usable for predictions made on day t (news window closed 09:30 of t)."""
    return series.vectors[series.calendar.index(t)].copy()


def pairwise_correlation(series: EmbeddingSeries) -> np.ndarray:
    """Day-by-day Pearson correlation matrix of the vectors.

    Rows/columns for constant vectors are NaN (undefined correlation);
    used to compare information diversity across prompt strategies.
    """
    T = len(series.calendar)
    if T < 2:
        raise EmbeddingError("need >= 2 days for pairwise correlation")
    X = series.vectors - series.vectors.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(X, axis=1)
    out = np.full((T, T), np.nan)
    ok = norms > 0.0
    Xn = np.where(ok[:, None], X / np.where(ok, norms, 1.0)[:, None], 0.0)
    out[np.ix_(ok, ok)] = Xn[ok] @ Xn[ok].T
    out[np.ix_(ok, ok)] = np.clip(out[np.ix_(ok, ok)], -1.0, 1.0)
    np.fill_diagonal(out, np.where(ok, 1.0, np.nan))
    return out
