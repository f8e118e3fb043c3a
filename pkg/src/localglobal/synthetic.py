"""Seeded synthetic market with planted alpha/global structure.

Returns are generated as

    r_t = alpha(M_t) + B(M_t) . (f*_t * support_mask) + eps

with known smooth maps alpha(.) and B(.), so a predictor built from the
planted truth reproduces the return panel exactly at noise_sigma = 0.
Daily embeddings decode the factor series: V_t = decode_matrix . f*_t + small
noise, making the support recoverable from embeddings.

All randomness comes from numpy's default PCG64 generator (64-bit state)
seeded once, so identical seeds give bit-identical instances across runs.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass

import numpy as np

from .embeddings import EmbeddingSeries
from .panel import FeaturePanel, ReturnPanel, TradingCalendar

# factor-observation noise in the feature columns: one stock sees f* badly,
# the cross-section sees it well
OBS_SIGMA = 1.0
ALPHA_SCALE = 0.01
BETA_SCALE = 0.01
EMBED_NOISE = 0.01


@dataclass
class SyntheticTruth:
    """Planted ground truth of a synthetic instance.

    alpha_weights / beta_weights pin down the smooth maps alpha(.) and B(.),
    so planted_predictions needs nothing beyond this object and the panel.
    """

    true_mask: np.ndarray      # (D,) binary, support of the global term
    factor_series: np.ndarray  # (T, D) daily factors f*_t
    decode_matrix: np.ndarray  # (d_llm, D)
    noise_sigma: float
    alpha_weights: np.ndarray  # (m,)   alpha(M) = ALPHA_SCALE * tanh(M @ alpha_weights)
    beta_weights: np.ndarray   # (m, D) B(M)     = BETA_SCALE  * tanh(M @ beta_weights)

    def __post_init__(self):
        if self.true_mask.sum() < 1:
            raise ValueError("true_mask must have at least one active entry")
        if not set(np.unique(self.true_mask)) <= {0, 1}:
            raise ValueError("true_mask entries must be 0/1")


def _weekday_calendar(start: str, n_days: int) -> TradingCalendar:
    d = datetime.date.fromisoformat(start)
    out = []
    while len(out) < n_days:
        if d.weekday() < 5:
            out.append(d.isoformat())
        d += datetime.timedelta(days=1)
    return TradingCalendar(tuple(out))


def planted_alpha_beta(truth: SyntheticTruth, M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    alpha = ALPHA_SCALE * np.tanh(M @ truth.alpha_weights)
    beta = BETA_SCALE * np.tanh(M @ truth.beta_weights)
    return alpha, beta


def planted_predictions(truth: SyntheticTruth, panel: FeaturePanel) -> list[np.ndarray]:
    """Noise-free return predictions from the planted truth (the oracle model)."""
    preds = []
    for t, M in enumerate(panel.features):
        alpha, beta = planted_alpha_beta(truth, M)
        masked = truth.factor_series[t] * truth.true_mask
        preds.append(alpha + beta @ masked)
    return preds


def generate_synthetic(
    seed: int,
    n_stocks: int,
    m: int,
    D: int,
    d_llm: int,
    T: int,
    noise_sigma: float,
) -> tuple[FeaturePanel, ReturnPanel, EmbeddingSeries, SyntheticTruth]:
    """Build a planted instance; identical seed -> bit-identical output."""
    if min(n_stocks, m, D, d_llm, T) < 1:
        raise ValueError("all sizes must be >= 1")
    if D > m:
        raise ValueError(f"D ({D}) must be <= m ({m})")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)

    calendar = _weekday_calendar("2020-01-01", T)
    stock_ids = tuple(f"S{i:04d}" for i in range(n_stocks))

    # per-stock exposure to the common factors, mean 1 so the cross-sectional
    # average preserves factor sign and scale
    exposure = rng.normal(1.0, 0.3, size=n_stocks)
    support = np.sort(rng.choice(D, size=min(4, D), replace=False))
    true_mask = np.zeros(D, dtype=np.int64)
    true_mask[support] = 1

    factor_series = rng.normal(0.0, 1.0, size=(T, D))
    decode_matrix = rng.normal(0.0, 1.0 / np.sqrt(D), size=(d_llm, D))
    alpha_weights = rng.normal(0.0, 1.0 / np.sqrt(m), size=m)
    beta_weights = rng.normal(0.0, 1.0 / np.sqrt(m), size=(m, D))
    truth = SyntheticTruth(true_mask, factor_series, decode_matrix, float(noise_sigma),
                           alpha_weights, beta_weights)

    features, returns = [], []
    for t in range(T):
        M = rng.normal(0.0, 1.0, size=(n_stocks, m))
        # first D columns carry noisy per-stock views of the day's factors
        M[:, :D] = exposure[:, None] * factor_series[t][None, :] + OBS_SIGMA * M[:, :D]
        alpha = ALPHA_SCALE * np.tanh(M @ alpha_weights)
        beta = BETA_SCALE * np.tanh(M @ beta_weights)
        eps = rng.normal(0.0, noise_sigma, size=n_stocks) if noise_sigma > 0 else 0.0
        r = alpha + beta @ (factor_series[t] * true_mask) + eps
        features.append(M)
        returns.append(np.asarray(r))

    embed_noise = rng.normal(0.0, EMBED_NOISE, size=(T, d_llm))
    vectors = factor_series @ decode_matrix.T + embed_noise
    # embeddings live on the float32 file grid so save/load is bit-exact
    vectors = vectors.astype(np.float32).astype(np.float64)

    fpanel = FeaturePanel(calendar, [stock_ids] * T, features, m)
    rpanel = ReturnPanel(calendar, 1, [stock_ids] * T, returns)
    series = EmbeddingSeries(calendar, d_llm, vectors, provenance=f"synthetic seed={seed}")
    return fpanel, rpanel, series, truth


def save_truth(truth: SyntheticTruth, path) -> None:
    rec = {
        "true_mask": truth.true_mask.tolist(),
        "factor_series": truth.factor_series.tolist(),
        "decode_matrix": truth.decode_matrix.tolist(),
        "noise_sigma": truth.noise_sigma,
        "alpha_weights": truth.alpha_weights.tolist(),
        "beta_weights": truth.beta_weights.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rec, fh)
        fh.write("\n")


def load_truth(path) -> SyntheticTruth:
    with open(path, encoding="utf-8") as fh:
        rec = json.load(fh)
    return SyntheticTruth(
        np.asarray(rec["true_mask"], dtype=np.int64),
        np.asarray(rec["factor_series"], dtype=np.float64),
        np.asarray(rec["decode_matrix"], dtype=np.float64),
        float(rec["noise_sigma"]),
        np.asarray(rec["alpha_weights"], dtype=np.float64),
        np.asarray(rec["beta_weights"], dtype=np.float64),
    )
