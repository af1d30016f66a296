"""Command-line front end for the embedding exporter."""

from __future__ import annotations

import argparse
import sys

from .exporter import ExportError, ExportJob, export_embeddings


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tweetstock-export",
        description="Embed a tweet corpus once and write an EMBC cache file")
    parser.add_argument("--tweets", required=True, help="directory per ticker of "
                        "JSON-lines tweet files")
    parser.add_argument("--out", required=True, help="output cache path")
    parser.add_argument("--model", default="vinai/bertweet-base",
                        help="pretrained model id, or hash / hash-<dim> for the "
                             "deterministic backend")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--max-per-day", type=int, default=None,
                        help="optional cap on tweets embedded per (ticker, day)")
    parser.add_argument("--dim", type=int, default=768,
                        help="expected embedding dimension of the cache")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        job = ExportJob(tweets_dir=args.tweets, output_path=args.out,
                        model=args.model, batch_size=args.batch_size,
                        max_tweets_per_day=args.max_per_day, expected_dim=args.dim)
        summary = export_embeddings(job)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"cache written path={args.out} tickers={summary.tickers} "
          f"days={summary.days_embedded} tweets={summary.tweets_processed} "
          f"skipped={summary.skipped_lines} dim={summary.dim}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
