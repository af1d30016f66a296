"""Command-line entry point: ingest, pseudo-embed, train, evaluate, grid.

Exit codes: 0 success, 2 for missing files or invalid configuration (the
message names the path or field), 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Dict, List

from . import data as D
from . import embeddings as E
from .evaluation import evaluate
from .experiments import expand_grid, parse_grid_file, render_table, run_grid, write_csv
from .models import ConfigError, ModelConfig, build_model, load_checkpoint, save_checkpoint
from .store import SampleStore, build_sample_store
from .training import TrainConfig, train


class CliError(Exception):
    def __init__(self, exit_code: int, message: str):
        super().__init__(message)
        self.exit_code = exit_code


def _require_file(path_str: str) -> Path:
    path = Path(path_str)
    if not path.exists():
        raise CliError(2, f"no such file or directory: {path}")
    return path


def _parse_kv_file(path: Path) -> Dict[str, str]:
    """`key = value` lines with '#' comments."""
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CliError(2, f"{path}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def _load_tweets(tweets_dir: Path) -> Dict[str, List[D.TweetRecord]]:
    """One subdirectory per ticker, JSON-lines files inside."""
    out: Dict[str, List[D.TweetRecord]] = {}
    for tick_dir in sorted(p for p in tweets_dir.iterdir() if p.is_dir()):
        records: List[D.TweetRecord] = []
        skipped = 0
        for path in sorted(p for p in tick_dir.iterdir() if p.is_file()):
            try:
                result = D.parse_tweet_file(path)
            except D.ParseError:
                skipped += 1
                continue
            records.extend(result.records)
            skipped += result.skipped
        if records:
            out[tick_dir.name.upper()] = records
        print(f"tweets ticker={tick_dir.name.upper()} parsed={len(records)} "
              f"skipped={skipped}")
    return out


def _load_prices(prices_dir: Path) -> Dict[str, List[D.PriceDay]]:
    out: Dict[str, List[D.PriceDay]] = {}
    for path in sorted(prices_dir.glob("*.csv")):
        days = D.parse_price_csv(path)
        if days:
            out[path.stem.upper()] = days
    if not out:
        raise CliError(2, f"no price CSV files found under {prices_dir}")
    return out


def _split_spec(args) -> D.SplitSpec:
    import datetime as dt

    def parse(name, default):
        value = getattr(args, name, None)
        if value is None:
            return default
        try:
            return dt.date.fromisoformat(value)
        except ValueError as exc:
            raise CliError(2, f"invalid config field {name}: {exc}") from exc

    base = D.SplitSpec()
    return D.SplitSpec(
        train_start=parse("train_start", base.train_start),
        train_end=parse("train_end", base.train_end),
        val_end=parse("val_end", base.val_end),
        test_end=parse("test_end", base.test_end),
    )


def cmd_ingest(args) -> int:
    prices_dir = _require_file(args.prices)
    tweets_dir = _require_file(args.tweets)
    cache_path = _require_file(args.cache)
    prices = _load_prices(prices_dir)
    tweets = _load_tweets(tweets_dir)
    cache = E.read_cache(cache_path)
    calendars = {t: [d.date for d in days] for t, days in prices.items()}
    aligned = D.align_cache_to_trading_days(cache, calendars)
    samples = D.generate_samples(prices, tweets, split=_split_spec(args),
                                 require_tweets=args.require_tweets)
    for name in D.SPLITS:
        print(f"samples split={name} count={len(samples[name])}")
    summary = build_sample_store(samples, aligned, args.out)
    print(f"store written path={args.out} total={summary.total} "
          f"embed_dim={summary.embed_dim}")
    return 0


def cmd_pseudo_embed(args) -> int:
    tweets_dir = _require_file(args.tweets)
    tweets = _load_tweets(tweets_dir)
    if not tweets:
        raise CliError(2, f"no parseable tweet files under {tweets_dir}")
    cache = E.build_pseudo_cache(tweets, dim=args.dim, seed=args.seed)
    E.write_cache(cache, args.out)
    print(f"cache written path={args.out} entries={len(cache)} dim={cache.dim}")
    return 0


def _model_config_from_file(settings: Dict[str, str], embed_dim: int) -> ModelConfig:
    kwargs = {"embed_dim": embed_dim}
    int_fields = {"N", "h", "dim_ff", "dim_key"}
    float_fields = {"dropout", "aux_weight"}
    for key, value in settings.items():
        if key in int_fields:
            kwargs[key] = int(value)
        elif key in float_fields:
            kwargs[key] = float(value)
        elif key == "arch":
            kwargs[key] = value
        elif key in ("auxiliary", "causal"):
            kwargs[key] = value.lower() in ("true", "1", "yes")
        elif key in ("lr", "learning_rate", "batch_size", "max_epochs",
                     "patience", "seed"):
            continue  # training settings share the file
        else:
            raise CliError(2, f"invalid config field {key}")
    try:
        return ModelConfig(**kwargs)
    except ConfigError as exc:
        raise CliError(2, f"invalid config field {exc.field}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise CliError(2, f"invalid config: {exc}") from exc


def _train_config_from_file(settings: Dict[str, str], seed_override=None) -> TrainConfig:
    kwargs = {}
    if "lr" in settings or "learning_rate" in settings:
        kwargs["learning_rate"] = float(settings.get("lr", settings.get("learning_rate")))
    for key in ("batch_size", "max_epochs", "patience", "seed"):
        if key in settings:
            kwargs[key] = int(settings[key])
    if seed_override is not None:
        kwargs["seed"] = seed_override
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise CliError(2, f"invalid config: {exc}") from exc


def cmd_train(args) -> int:
    store_path = _require_file(args.store)
    config_path = _require_file(args.config)
    settings = _parse_kv_file(config_path)
    with SampleStore(store_path) as store:
        model_cfg = _model_config_from_file(settings, embed_dim=store.embed_dim)
        train_cfg = _train_config_from_file(settings, seed_override=args.seed)
        model = build_model(model_cfg, seed=train_cfg.seed)
        report = train(model, store, train_cfg, log_fn=print)
        save_checkpoint(model, args.out)
        print(f"checkpoint written path={args.out} best_epoch={report.best_epoch} "
              f"stopped_epoch={report.stopped_epoch} "
              f"best_val_loss={report.best_val_loss:.6f}")
    return 0


def cmd_evaluate(args) -> int:
    store_path = _require_file(args.store)
    ckpt_path = _require_file(args.ckpt)
    model = load_checkpoint(ckpt_path)
    with SampleStore(store_path) as store:
        if model.cfg.embed_dim != store.embed_dim:
            raise CliError(2, f"invalid config field embed_dim: checkpoint has "
                              f"{model.cfg.embed_dim}, store has {store.embed_dim}")
        report = evaluate(model, store, args.split)
    print(report.to_record())
    print(f"accuracy={report.accuracy:.3f} mcc={report.mcc:.5f}")
    return 0


def cmd_grid(args) -> int:
    store_path = _require_file(args.store)
    grid_path = _require_file(args.grid)
    try:
        grid = parse_grid_file(grid_path)
        configs = expand_grid(grid)
    except ValueError as exc:
        raise CliError(2, f"invalid config: {exc}") from exc
    print(f"grid points={len(configs)}")
    train_cfg = _train_config_from_file(
        _parse_kv_file(_require_file(args.train_config)) if args.train_config else {},
        seed_override=args.seed)
    with SampleStore(store_path) as store:
        records = run_grid(configs, store, train_cfg, parallelism=args.jobs)
    write_csv(records, args.out)
    print(render_table(records, sort_by_mcc=args.sort_by_mcc))
    failed = sum(1 for r in records if r.failed)
    print(f"grid finished runs={len(records)} failed={failed} csv={args.out}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tweetstock",
        description="Stock movement classification from prices and tweet embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a sample store from raw data")
    p.add_argument("--prices", required=True)
    p.add_argument("--tweets", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--require-tweets", dest="require_tweets", action="store_true")
    for flag in ("train-start", "train-end", "val-end", "test-end"):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), default=None)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("pseudo-embed", help="write a deterministic embedding cache")
    p.add_argument("--tweets", required=True)
    p.add_argument("--dim", type=int, default=768)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pseudo_embed)

    p = sub.add_parser("train", help="train one model from a config file")
    p.add_argument("--store", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a split")
    p.add_argument("--store", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grid", help="run a hyperparameter grid")
    p.add_argument("--store", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-config", dest="train_config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--sort-by-mcc", dest="sort_by_mcc", action="store_true")
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (D.ParseError, D.DataIntegrityError, E.CacheFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: no such file or directory: {exc.filename}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
