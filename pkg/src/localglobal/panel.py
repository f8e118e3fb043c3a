"""Aligned stock feature/return panels: data model, CSV ingestion, preprocessing.

Cross-sections may differ across dates (stocks enter and leave the universe);
all per-date containers are indexed by position in the trading calendar.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class PanelError(ValueError):
    """Schema or alignment violation in panel data; message carries row context."""


@dataclass(frozen=True)
class TradingCalendar:
    """Strictly increasing sequence of ISO-8601 trading dates."""

    dates: tuple[str, ...]

    def __post_init__(self):
        for a, b in zip(self.dates, self.dates[1:]):
            if b <= a:
                raise PanelError(f"calendar dates not strictly increasing: {a!r} -> {b!r}")

    def __len__(self) -> int:
        return len(self.dates)

    def index(self, date: str) -> int:
        lo = np.searchsorted(np.asarray(self.dates), date)
        if lo >= len(self.dates) or self.dates[lo] != date:
            raise PanelError(f"date {date!r} not in calendar")
        return int(lo)


@dataclass
class FeaturePanel:
    """Per-date n_t x m matrices of standardized stock features."""

    calendar: TradingCalendar
    stock_ids: list[tuple[str, ...]]
    features: list[np.ndarray]
    m: int

    def __post_init__(self):
        if not (len(self.calendar) == len(self.stock_ids) == len(self.features)):
            raise PanelError("calendar / stock_ids / features length mismatch")
        for t, (ids, mat) in enumerate(zip(self.stock_ids, self.features)):
            if mat.ndim != 2 or mat.shape != (len(ids), self.m):
                raise PanelError(f"date index {t}: matrix shape {mat.shape} != ({len(ids)}, {self.m})")
            if not np.all(np.isfinite(mat)):
                raise PanelError(f"date index {t}: non-finite feature value")
            if len(set(ids)) != len(ids) or list(ids) != sorted(ids):
                raise PanelError(f"date index {t}: stock_ids must be unique and sorted ascending")

    def n_stocks(self, t: int) -> int:
        return len(self.stock_ids[t])


@dataclass
class ReturnPanel:
    """Per-date forward simple returns over `horizon` trading days.

    returns[t][i] belongs to stock_ids[t][i]; stock order matches the paired
    FeaturePanel's cross-section on the same date.
    """

    calendar: TradingCalendar
    horizon: int
    stock_ids: list[tuple[str, ...]]
    returns: list[np.ndarray]

    def __post_init__(self):
        if self.horizon < 1:
            raise PanelError(f"horizon must be >= 1, got {self.horizon}")
        if not (len(self.calendar) == len(self.stock_ids) == len(self.returns)):
            raise PanelError("calendar / stock_ids / returns length mismatch")
        for t, (ids, vec) in enumerate(zip(self.stock_ids, self.returns)):
            if vec.shape != (len(ids),):
                raise PanelError(f"date index {t}: return vector shape {vec.shape} != ({len(ids)},)")
            if not np.all(np.isfinite(vec)):
                raise PanelError(f"date index {t}: non-finite return")
            if np.any(vec <= -1.0):
                raise PanelError(f"date index {t}: return <= -1 (prices must be positive)")


@dataclass
class PriceTable:
    """Per-date close prices, same layout conventions as FeaturePanel."""

    calendar: TradingCalendar
    stock_ids: list[tuple[str, ...]]
    prices: list[np.ndarray]


def _fmt(x: float) -> str:
    # repr of a Python float is the shortest string that round-trips exactly
    return repr(float(x))


def save_panel(fpanel: FeaturePanel, rpanel: ReturnPanel, features_path, returns_path) -> None:
    """Write the CSV file pair; load_panel on the result is bit-exact."""
    with open(features_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "stock_id"] + [f"f{j}" for j in range(fpanel.m)])
        for t, date in enumerate(fpanel.calendar.dates):
            for i, sid in enumerate(fpanel.stock_ids[t]):
                w.writerow([date, sid] + [_fmt(v) for v in fpanel.features[t][i]])
    with open(returns_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# horizon={rpanel.horizon}\n")
        w = csv.writer(fh)
        w.writerow(["date", "stock_id", "ret"])
        for t, date in enumerate(rpanel.calendar.dates):
            for i, sid in enumerate(rpanel.stock_ids[t]):
                w.writerow([date, sid, _fmt(rpanel.returns[t][i])])


def _parse_float(text: str, row_no: int, col: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise PanelError(f"row {row_no}: column {col!r} is not a number: {text!r}")
    if not np.isfinite(v):
        raise PanelError(f"row {row_no}: column {col!r} is not finite: {text!r}")
    return v


def load_panel(features_path, returns_path) -> tuple[FeaturePanel, ReturnPanel]:
    """Load and cross-validate the feature/return CSV pair.

    Raises PanelError (with row numbers) on schema violations, duplicate
    (date, stock) rows, or calendar/universe misalignment between the files.
    """
    by_date: dict[str, dict[str, list[float]]] = {}
    with open(features_path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or header[:2] != ["date", "stock_id"]:
            raise PanelError(f"{features_path}: bad feature header {header!r}")
        m = len(header) - 2
        if m < 1 or header[2:] != [f"f{j}" for j in range(m)]:
            raise PanelError(f"{features_path}: feature columns must be f0..f{{m-1}}")
        for row_no, row in enumerate(rd, start=2):
            if len(row) != m + 2:
                raise PanelError(f"row {row_no}: expected {m + 2} fields, got {len(row)}")
            date, sid = row[0], row[1]
            day = by_date.setdefault(date, {})
            if sid in day:
                raise PanelError(f"row {row_no}: duplicate (date, stock) pair ({date}, {sid})")
            day[sid] = [_parse_float(v, row_no, header[2 + j]) for j, v in enumerate(row[2:])]

    horizon = None
    rets_by_date: dict[str, dict[str, float]] = {}
    with open(returns_path, newline="", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first.startswith("# horizon="):
            raise PanelError(f"{returns_path}: missing '# horizon=<h>' comment line")
        try:
            horizon = int(first.split("=", 1)[1])
        except ValueError:
            raise PanelError(f"{returns_path}: bad horizon value {first!r}")
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != ["date", "stock_id", "ret"]:
            raise PanelError(f"{returns_path}: bad return header {header!r}")
        for row_no, row in enumerate(rd, start=3):
            if len(row) != 3:
                raise PanelError(f"row {row_no}: expected 3 fields, got {len(row)}")
            date, sid = row[0], row[1]
            day = rets_by_date.setdefault(date, {})
            if sid in day:
                raise PanelError(f"row {row_no}: duplicate (date, stock) pair ({date}, {sid})")
            day[sid] = _parse_float(row[2], row_no, "ret")

    if sorted(by_date) != sorted(rets_by_date):
        only_f = sorted(set(by_date) - set(rets_by_date))
        only_r = sorted(set(rets_by_date) - set(by_date))
        raise PanelError(f"date misalignment between files: features-only={only_f} returns-only={only_r}")

    dates = tuple(sorted(by_date))
    cal = TradingCalendar(dates)
    stock_ids, feats, rets = [], [], []
    for date in dates:
        if sorted(by_date[date]) != sorted(rets_by_date[date]):
            raise PanelError(f"date {date}: stock universe differs between files")
        ids = tuple(sorted(by_date[date]))
        stock_ids.append(ids)
        feats.append(np.array([by_date[date][s] for s in ids], dtype=np.float64))
        rets.append(np.array([rets_by_date[date][s] for s in ids], dtype=np.float64))
    fpanel = FeaturePanel(cal, stock_ids, feats, m)
    rpanel = ReturnPanel(cal, horizon, list(stock_ids), rets)
    return fpanel, rpanel


def standardize(panel: FeaturePanel) -> FeaturePanel:
    """Cross-sectional z-score per date and feature column (population std).

    Zero-variance columns map to all-zeros. Idempotent within 1e-12.
    """
    out = []
    for t, mat in enumerate(panel.features):
        if mat.shape[0] < 2:
            raise PanelError(f"date index {t}: need >= 2 stocks to standardize")
        mu = mat.mean(axis=0)
        sd = mat.std(axis=0)
        z = np.where(sd > 0.0, (mat - mu) / np.where(sd > 0.0, sd, 1.0), 0.0)
        out.append(z)
    return FeaturePanel(panel.calendar, list(panel.stock_ids), out, panel.m)


def forward_returns(prices: PriceTable, horizon: int) -> ReturnPanel:
    """Simple returns price[t+h]/price[t] - 1; the last h dates drop out.

    Only stocks present on both t and t+h appear in the cross-section at t.
    """
    if horizon < 1:
        raise PanelError(f"horizon must be >= 1, got {horizon}")
    T = len(prices.calendar)
    if horizon >= T:
        raise PanelError(f"horizon {horizon} >= number of dates {T}")
    for t, vec in enumerate(prices.prices):
        if np.any(vec <= 0.0):
            raise PanelError(f"date index {t}: non-positive price")
    dates = prices.calendar.dates[: T - horizon]
    stock_ids, rets = [], []
    for t in range(T - horizon):
        fut = dict(zip(prices.stock_ids[t + horizon], prices.prices[t + horizon]))
        ids = tuple(s for s in prices.stock_ids[t] if s in fut)
        now = dict(zip(prices.stock_ids[t], prices.prices[t]))
        stock_ids.append(ids)
        rets.append(np.array([fut[s] / now[s] - 1.0 for s in ids], dtype=np.float64))
    return ReturnPanel(TradingCalendar(dates), horizon, stock_ids, rets)
