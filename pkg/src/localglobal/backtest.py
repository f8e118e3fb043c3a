"""Deterministic cross-sectional decile backtester and evaluation metrics.

Daily protocol: sort stocks by predicted return, split into quantile buckets,
hold an equal-weight book of the top bucket, charge a proportional cost per
side on traded notional at each rebalance, accrue realized returns on held
weights. A parallel bottom-bucket book is simulated with the same rules to
report the top-to-bottom growth ratio.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .panel import FeaturePanel, ReturnPanel


class BacktestError(ValueError):
    pass


@dataclass
class BacktestConfig:
    quantiles: int = 10
    cost_rate: float = 0.003  # per side, fraction of traded notional
    holding: int = 1          # rebalance period in trading days
    annualization_days: int = 252
    risk_free_rate: float = 0.0

    def __post_init__(self):
        if self.quantiles < 2:
            raise BacktestError("quantiles must be >= 2")
        if not (0.0 <= self.cost_rate < 1.0):
            raise BacktestError("cost_rate must be in [0, 1)")
        if self.holding < 1:
            raise BacktestError("holding must be >= 1")


@dataclass
class PortfolioState:
    weights: dict[str, float] = field(default_factory=dict)
    equity: float = 1.0


@dataclass
class BacktestReport:
    dates: list[str]
    equity_curve: list[float]       # length len(dates) + 1, starts at 1.0
    daily_returns: list[float]
    rank_ic_series: list[float | None]
    turnovers: list[float]
    costs: list[float]
    metrics: dict[str, float]


def _average_ranks(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    sx = x[order]
    i = 0
    while i < n:
        j = i
        while j < n and sx[j] == sx[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0
        i = j
    return ranks


def rank_ic(predictions: np.ndarray, realized: np.ndarray) -> float | None:
    """Spearman rank correlation with average-rank ties; None when undefined."""
    predictions = np.asarray(predictions, dtype=np.float64)
    realized = np.asarray(realized, dtype=np.float64)
    if predictions.shape != realized.shape or predictions.shape[0] < 2:
        raise BacktestError("rank_ic needs two equal-length vectors with n >= 2")
    rp = _average_ranks(predictions)
    rr = _average_ranks(realized)
    dp, dr = rp - rp.mean(), rr - rr.mean()
    denom = np.sqrt((dp**2).sum() * (dr**2).sum())
    if denom == 0.0:
        return None
    return float(np.clip((dp * dr).sum() / denom, -1.0, 1.0))


def quantile_assign(predictions: np.ndarray, quantiles: int) -> np.ndarray:
    """Bucket labels 0 (bottom) .. quantiles-1 (top) by ascending prediction.

    Bucket sizes differ by at most one. The stable sort means ties resolve by
    input position, which is ascending stock_id for canonical cross-sections.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    n = predictions.shape[0]
    if n < quantiles:
        raise BacktestError(f"need n >= quantiles, got n={n} quantiles={quantiles}")
    order = np.argsort(predictions, kind="mergesort")
    labels = np.empty(n, dtype=np.int64)
    for q, chunk in enumerate(np.array_split(order, quantiles)):
        labels[chunk] = q
    return labels


def rebalance(state: PortfolioState, target_ids, cfg: BacktestConfig):
    """Move to an equal-weight book on target_ids; returns (state, cost, turnover)."""
    target_ids = sorted(target_ids)
    if not target_ids:
        raise BacktestError("empty rebalance target set")
    w_new = {sid: 1.0 / len(target_ids) for sid in target_ids}
    keys = set(w_new) | set(state.weights)
    gross = sum(abs(w_new.get(k, 0.0) - state.weights.get(k, 0.0)) for k in keys)
    turnover = 0.5 * gross
    cost = cfg.cost_rate * gross * state.equity
    return PortfolioState(w_new, state.equity - cost), cost, turnover


def _simulate_bucket(pick_label: int, cached_days, cfg: BacktestConfig):
    """Shared daily loop; cached_days = [(labels, id_to_ret, ids)]. Returns series."""
    equity = 1.0
    weights: dict[str, float] = {}
    equity_curve = [1.0]
    daily_returns, turnovers, costs = [], [], []
    for d, (labels, id_to_ret, ids) in enumerate(cached_days):
        cost = 0.0
        turnover = 0.0
        if d % cfg.holding == 0:
            target = [sid for sid, lab in zip(ids, labels) if lab == pick_label]
            w_new = {sid: 1.0 / len(target) for sid in target}
            keys = set(w_new) | set(weights)
            gross = sum(abs(w_new.get(k, 0.0) - weights.get(k, 0.0)) for k in keys)
            turnover = 0.5 * gross
            cost = cfg.cost_rate * gross * equity
            weights = w_new
        port_ret = sum(w * id_to_ret[sid] for sid, w in weights.items())
        equity_next = equity * (1.0 + port_ret) - cost
        daily_returns.append(equity_next / equity - 1.0)
        # drift held weights by each stock's relative growth
        if port_ret > -1.0:
            weights = {sid: w * (1.0 + id_to_ret[sid]) / (1.0 + port_ret)
                       for sid, w in weights.items()}
        equity = equity_next
        equity_curve.append(equity)
        turnovers.append(turnover)
        costs.append(cost)
    return equity_curve, daily_returns, turnovers, costs


def run_backtest(predictor, fpanel: FeaturePanel, rpanel: ReturnPanel,
                 cfg: BacktestConfig) -> BacktestReport:
    """Simulate the top-bucket strategy; predictor(date, features) -> predictions.

    The predictor is queried exactly once per date, in calendar order, with
    that date's own cross-section only, so it can never see the future.
    """
    if fpanel.calendar.dates != rpanel.calendar.dates:
        raise BacktestError("feature and return calendars are misaligned")
    cached_days = []
    rank_ics = []
    for d, date in enumerate(fpanel.calendar.dates):
        ids = fpanel.stock_ids[d]
        if tuple(rpanel.stock_ids[d]) != tuple(ids):
            raise BacktestError(f"date {date}: stock universes differ between panels")
        preds = np.asarray(predictor(date, fpanel.features[d]), dtype=np.float64)
        if preds.shape != (len(ids),):
            raise BacktestError(f"date {date}: predictor returned shape {preds.shape}")
        labels = quantile_assign(preds, cfg.quantiles)
        id_to_ret = dict(zip(ids, rpanel.returns[d]))
        cached_days.append((labels, id_to_ret, ids))
        rank_ics.append(rank_ic(preds, rpanel.returns[d]))

    top = _simulate_bucket(cfg.quantiles - 1, cached_days, cfg)
    bottom = _simulate_bucket(0, cached_days, cfg)
    equity_curve, daily_returns, turnovers, costs = top
    tmb = top[0][-1] / bottom[0][-1]
    metrics = summary_metrics(daily_returns, equity_curve, rank_ics, turnovers, cfg,
                              top_minus_bottom=tmb)
    return BacktestReport(list(fpanel.calendar.dates), equity_curve, daily_returns,
                          rank_ics, turnovers, costs, metrics)


def summary_metrics(daily_returns, equity_curve, rank_ic_series, turnovers,
                    cfg: BacktestConfig, top_minus_bottom: float | None = None) -> dict:
    r = np.asarray(daily_returns, dtype=np.float64)
    if r.shape[0] < 2:
        raise BacktestError("need >= 2 daily returns")
    cumulative = float(np.prod(1.0 + r) - 1.0)
    annual = float((1.0 + cumulative) ** (cfg.annualization_days / r.shape[0]) - 1.0)
    sd = float(np.std(r, ddof=1))
    if sd == 0.0:
        raise BacktestError("Sharpe undefined: zero return variance")
    rf_daily = (1.0 + cfg.risk_free_rate) ** (1.0 / cfg.annualization_days) - 1.0
    sharpe = float(np.mean(r - rf_daily) / sd * np.sqrt(cfg.annualization_days))
    eq = np.asarray(equity_curve, dtype=np.float64)
    peaks = np.maximum.accumulate(eq)
    mdd = float(np.max((peaks - eq) / peaks))
    defined = [x for x in rank_ic_series if x is not None]
    metrics = {
        "rank_ic_mean": float(np.mean(defined)) if defined else float("nan"),
        "rank_ic_undefined_days": len(rank_ic_series) - len(defined),
        "cumulative_return": cumulative,
        "annual_return": annual,
        "sharpe": sharpe,
        "mdd": mdd,
        "turnover_mean": float(np.mean(turnovers)),
    }
    if top_minus_bottom is not None:
        # ratio of top-bucket to bottom-bucket cumulative growth
        metrics["top_minus_bottom"] = float(top_minus_bottom)
    return metrics


def horizon_sweep(predictors: dict[int, object], fpanel: FeaturePanel,
                  rpanel: ReturnPanel, cfg: BacktestConfig) -> list[dict]:
    """Backtest one trained predictor per horizon under the 1-day-rebalance protocol."""
    rows = []
    for h in sorted(predictors):
        report = run_backtest(predictors[h], fpanel, rpanel, cfg)
        rows.append({
            "horizon": h,
            "rank_ic_mean": report.metrics["rank_ic_mean"],
            "annual_return": report.metrics["annual_return"],
            "sharpe": report.metrics["sharpe"],
            "turnover_mean": report.metrics["turnover_mean"],
        })
    return rows


def _fmt(x) -> str:
    # repr of a Python float round-trips exactly
    return repr(float(x))


def write_report_csv(report: BacktestReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "equity", "daily_return", "rank_ic", "turnover", "cost"])
        for d, date in enumerate(report.dates):
            ic = report.rank_ic_series[d]
            w.writerow([date, _fmt(report.equity_curve[d + 1]), _fmt(report.daily_returns[d]),
                        "" if ic is None else _fmt(ic), _fmt(report.turnovers[d]),
                        _fmt(report.costs[d])])


def write_metrics_json(metrics: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_cumulative_csv(reports: dict[str, BacktestReport], path) -> None:
    """Plot-ready cumulative-return table, one column per model."""
    names = sorted(reports)
    dates = reports[names[0]].dates
    for name in names:
        if reports[name].dates != dates:
            raise BacktestError("reports cover different date ranges")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date"] + names)
        for d, date in enumerate(dates):
            w.writerow([date] + [_fmt(reports[n].equity_curve[d + 1] - 1.0) for n in names])
