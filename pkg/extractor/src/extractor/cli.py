"""Command-line entry point: news JSONL in, embedding JSONL out."""

from __future__ import annotations

import argparse
import sys

from .embed import ExtractorConfig, extract_day, provenance_tag, write_series
from .news import ExtractorError, load_news


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="extract",
                                description="embed daily appended news headlines")
    p.add_argument("--news", required=True, help="JSONL of {timestamp, headline}")
    p.add_argument("--out", required=True, help="output embedding JSONL path")
    backend = p.add_mutually_exclusive_group(required=True)
    backend.add_argument("--model", help="causal language model checkpoint id")
    backend.add_argument("--mock", action="store_true",
                         help="deterministic hash-based vectors, no model needed")
    p.add_argument("--dim", type=int, default=64, help="mock vector dimension")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-tokens", type=int, default=2048)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExtractorConfig(model_id=args.model or "", max_tokens=args.max_tokens,
                              mock=args.mock, mock_dim=args.dim, seed=args.seed)
        days = load_news(args.news)
        vectors = {day.date: extract_day(cfg, day) for day in days}
        write_series(vectors, args.out, provenance_tag(cfg))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(vectors)} day vector(s) to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
