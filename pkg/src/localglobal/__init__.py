"""Desk-scale research engine for local-global cross-sectional return models.

Subpackages: panel (data model + synthetic generator), embeddings (daily
news-embedding series), model (the predictor variants), training (critic
fitting + PPO mask alignment), backtest (decile simulation + metrics),
cli (reproducible experiment driver).
"""

from . import backtest, cli, embeddings, model, panel, synthetic, training

__all__ = ["backtest", "cli", "embeddings", "model", "panel", "synthetic", "training"]
__version__ = "0.1.0"
