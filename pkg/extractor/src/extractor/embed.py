"""Prompt building, embedding extraction, and JSONL output.

The prompt is the day's headlines appended with blank lines and no
instruction framing; instruction-heavy prompts were found to produce highly
correlated day vectors. The real backend records the final-layer hidden state
at the last token position. The mock backend derives a unit vector from a
hash of (seed, date, prompt), so tests are deterministic and offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .news import ExtractorError, NewsDay

log = logging.getLogger(__name__)


@dataclass
class ExtractorConfig:
    model_id: str = ""
    max_tokens: int = 2048
    mock: bool = False
    mock_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.mock and self.mock_dim < 1:
            raise ExtractorError("mock_dim must be >= 1 in mock mode")
        if not self.mock and not self.model_id:
            raise ExtractorError("either set mock=True or provide a model_id")
        if self.max_tokens < 1:
            raise ExtractorError("max_tokens must be >= 1")


def _approx_tokens(text: str) -> int:
    return len(text.split())


def build_prompt(day: NewsDay, max_tokens: int | None = None) -> str:
    """Headlines joined by blank lines, oldest first; no instruction framing.

    When the (approximate, whitespace-token) budget is exceeded, the oldest
    headlines are dropped first: the most recent news is the most
    decision-relevant.
    """
    if not day.headlines:
        raise ExtractorError(f"{day.date}: cannot build a prompt from an empty day")
    kept = list(day.headlines)
    if max_tokens is not None:
        while len(kept) > 1 and sum(_approx_tokens(h) + 1 for h in kept) > max_tokens:
            kept.pop(0)
        if len(kept) < len(day.headlines):
            log.warning("%s: dropped %d oldest headline(s) to fit %d tokens",
                        day.date, len(day.headlines) - len(kept), max_tokens)
    return "\n\n".join(kept)


def _mock_vector(cfg: ExtractorConfig, day: NewsDay, prompt: str) -> np.ndarray:
    material = f"{cfg.seed}|{day.date}|{prompt}".encode("utf-8")
    digest = hashlib.sha256(material).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:16], "little"))
    v = rng.standard_normal(cfg.mock_dim)
    return v / np.linalg.norm(v)


_MODEL_CACHE: dict[str, tuple] = {}


def _model_vector(cfg: ExtractorConfig, prompt: str) -> np.ndarray:
    try:
        import torch
        from transformers import AutoModel, AutoTokenizer
    except ImportError as exc:
        raise ExtractorError(f"real-model mode needs torch and transformers: {exc}")
    try:
        if cfg.model_id not in _MODEL_CACHE:
            tok = AutoTokenizer.from_pretrained(cfg.model_id)
            model = AutoModel.from_pretrained(cfg.model_id)
            model.eval()
            _MODEL_CACHE[cfg.model_id] = (tok, model)
        tok, model = _MODEL_CACHE[cfg.model_id]
        enc = tok(prompt, return_tensors="pt", truncation=True, max_length=cfg.max_tokens)
        with torch.no_grad():
            out = model(**enc, output_hidden_states=True)
    except ExtractorError:
        raise
    except Exception as exc:
        raise ExtractorError(f"model {cfg.model_id!r} failed: {exc}")
    hidden = out.hidden_states[-1][0, -1, :].cpu().numpy().astype(np.float64)
    if not np.all(np.isfinite(hidden)):
        raise ExtractorError(f"model {cfg.model_id!r} produced non-finite values")
    return hidden


def extract_day(cfg: ExtractorConfig, day: NewsDay) -> np.ndarray:
    """Embed one day's appended headlines; see module docstring for backends."""
    prompt = build_prompt(day, cfg.max_tokens)
    if cfg.mock:
        return _mock_vector(cfg, day, prompt)
    return _model_vector(cfg, prompt)


def provenance_tag(cfg: ExtractorConfig) -> str:
    if cfg.mock:
        return f"mock-sha256 dim={cfg.mock_dim} seed={cfg.seed}"
    return f"{cfg.model_id} final-hidden-state last-token"


def write_series(vectors_by_date: dict[str, np.ndarray], path, provenance: str = "") -> None:
    """Write the embedding JSONL format: meta line, then date-sorted records.

    Values are stored as float32. The file is written to a temporary name in
    the same directory and renamed into place, so readers never see a partial
    file.
    """
    if not vectors_by_date:
        raise ExtractorError("no vectors to write")
    dims = {np.asarray(v).shape for v in vectors_by_date.values()}
    if len(dims) != 1 or len(next(iter(dims))) != 1:
        raise ExtractorError(f"inconsistent vector shapes: {sorted(dims)}")
    dim = next(iter(dims))[0]
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"meta": {"provenance": provenance}}) + "\n")
            for date in sorted(vectors_by_date):
                vec = [float(np.float32(x)) for x in np.asarray(vectors_by_date[date])]
                fh.write(json.dumps({"date": date, "dim": dim, "vector": vec}) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
