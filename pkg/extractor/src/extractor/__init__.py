"""Turn timestamped news headlines into per-trading-day embedding files.

Headlines are grouped into overnight windows (previous close 15:30 through
current open 09:30], appended into one prompt per day, and embedded either by
a causal language model's final hidden state at the last token position or by
a deterministic hash-seeded mock that needs no model download.
"""

from .news import ExtractorError, NewsDay, assign_trading_day, group_news_days, load_news
from .embed import ExtractorConfig, build_prompt, extract_day, write_series

__version__ = "0.1.0"

__all__ = [
    "ExtractorError", "NewsDay", "assign_trading_day", "group_news_days",
    "load_news", "ExtractorConfig", "build_prompt", "extract_day", "write_series",
]
