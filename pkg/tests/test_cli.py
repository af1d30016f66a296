"""End-to-end command-line pipeline."""

import hashlib
import shutil

import numpy as np
import pytest

from tweetstock.cli import main
from tweetstock.embeddings import read_cache

from conftest import random_walk_prices, write_price_csv, write_tweet_file


TRAIN_CONFIG = """\
arch = fusion_transformer
N = 1
h = 2
dim_ff = 16
dim_key = 8
dropout = 0.0
lr = 1e-3
batch_size = 16
max_epochs = 2
patience = 4
seed = 3
"""

SPLIT_FLAGS = ["--train-start", "2014-01-01", "--train-end", "2014-05-01",
               "--val-end", "2014-06-01", "--test-end", "2014-08-01"]


@pytest.fixture
def corpus_dirs(tmp_path):
    rng = np.random.default_rng(77)
    prices_dir = tmp_path / "prices"
    tweets_dir = tmp_path / "tweets"
    prices_dir.mkdir()
    tweets_dir.mkdir()
    for ticker in ("AAA", "BBB"):
        days = random_walk_prices(rng, ticker, 180)
        write_price_csv(prices_dir, ticker, days)
        entries = []
        for i, day in enumerate(days):
            if i % 3 == 0:
                stamp = f"{day.date.isoformat()}T14:30:00Z"
                entries.append((stamp, f"${ticker} take {i}"))
        write_tweet_file(tweets_dir, ticker, entries)
    return prices_dir, tweets_dir


def run_pipeline(tmp_path, corpus_dirs, capsys):
    prices_dir, tweets_dir = corpus_dirs
    cache = tmp_path / "cache.bin"
    store = tmp_path / "store.bin"
    assert main(["pseudo-embed", "--tweets", str(tweets_dir), "--dim", "16",
                 "--seed", "1", "--out", str(cache)]) == 0
    assert main(["ingest", "--prices", str(prices_dir), "--tweets", str(tweets_dir),
                 "--cache", str(cache), "--out", str(store), *SPLIT_FLAGS]) == 0
    capsys.readouterr()
    return cache, store


class TestPipeline:
    def test_pseudo_embed_writes_valid_cache(self, tmp_path, corpus_dirs, capsys):
        cache_path, _ = run_pipeline(tmp_path, corpus_dirs, capsys)
        cache = read_cache(cache_path)
        assert cache.dim == 16 and len(cache) > 0

    def test_train_and_evaluate_after_deleting_raw_data(self, tmp_path, corpus_dirs,
                                                        capsys):
        prices_dir, tweets_dir = corpus_dirs
        _, store = run_pipeline(tmp_path, corpus_dirs, capsys)
        shutil.rmtree(prices_dir)
        shutil.rmtree(tweets_dir)
        config = tmp_path / "model.cfg"
        config.write_text(TRAIN_CONFIG)
        ckpt = tmp_path / "model.ckpt"
        assert main(["train", "--store", str(store), "--config", str(config),
                     "--out", str(ckpt)]) == 0
        out = capsys.readouterr().out
        assert "epoch=1 split=train" in out
        assert "checkpoint written" in out
        assert main(["evaluate", "--store", str(store), "--ckpt", str(ckpt),
                     "--split", "test"]) == 0
        out = capsys.readouterr().out
        assert "accuracy=" in out and "mcc=" in out

    def test_outputs_idempotent(self, tmp_path, corpus_dirs, capsys):
        prices_dir, tweets_dir = corpus_dirs
        digests = []
        for round_dir in ("one", "two"):
            base = tmp_path / round_dir
            base.mkdir()
            cache = base / "cache.bin"
            store = base / "store.bin"
            config = base / "model.cfg"
            ckpt = base / "model.ckpt"
            assert main(["pseudo-embed", "--tweets", str(tweets_dir), "--dim", "16",
                         "--seed", "1", "--out", str(cache)]) == 0
            assert main(["ingest", "--prices", str(prices_dir), "--tweets",
                         str(tweets_dir), "--cache", str(cache), "--out", str(store),
                         *SPLIT_FLAGS]) == 0
            config.write_text(TRAIN_CONFIG)
            assert main(["train", "--store", str(store), "--config", str(config),
                         "--out", str(ckpt)]) == 0
            digests.append(tuple(hashlib.sha256(p.read_bytes()).hexdigest()
                                 for p in (cache, store, ckpt)))
        capsys.readouterr()
        assert digests[0] == digests[1]

    def test_grid_subcommand(self, tmp_path, corpus_dirs, capsys):
        _, store = run_pipeline(tmp_path, corpus_dirs, capsys)
        grid_file = tmp_path / "grid.txt"
        grid_file.write_text("arch = feedforward\ndim_ff = 8, 16\n"
                             "dim_key = 8\nh = 2\nlr = 1e-3\naux_weight = 0.5\n")
        train_cfg = tmp_path / "train.cfg"
        train_cfg.write_text("batch_size = 16\nmax_epochs = 2\nseed = 5\n")
        out_csv = tmp_path / "results.csv"
        assert main(["grid", "--store", str(store), "--grid", str(grid_file),
                     "--out", str(out_csv), "--train-config", str(train_cfg),
                     "--jobs", "2"]) == 0
        out = capsys.readouterr().out
        assert "grid points=2" in out
        assert "Model" in out and "MCC" in out
        assert out_csv.exists()
        assert "failed=0" in out
        # rerunning with identical inputs reproduces the CSV byte for byte
        rerun_csv = tmp_path / "results2.csv"
        assert main(["grid", "--store", str(store), "--grid", str(grid_file),
                     "--out", str(rerun_csv), "--train-config", str(train_cfg),
                     "--jobs", "1"]) == 0
        capsys.readouterr()
        assert rerun_csv.read_bytes() == out_csv.read_bytes()


class TestErrors:
    def test_missing_file_exit_2_names_path(self, tmp_path, capsys):
        code = main(["evaluate", "--store", str(tmp_path / "absent.bin"),
                     "--ckpt", str(tmp_path / "absent.ckpt")])
        assert code == 2
        err = capsys.readouterr().err
        assert "absent.bin" in err

    def test_unknown_arch_exit_2_names_field(self, tmp_path, corpus_dirs, capsys):
        _, store = run_pipeline(tmp_path, corpus_dirs, capsys)
        config = tmp_path / "bad.cfg"
        config.write_text("arch = lstm\n")
        code = main(["train", "--store", str(store), "--config", str(config),
                     "--out", str(tmp_path / "x.ckpt")])
        assert code == 2
        assert "arch" in capsys.readouterr().err

    def test_invalid_grid_key_exit_2(self, tmp_path, corpus_dirs, capsys):
        _, store = run_pipeline(tmp_path, corpus_dirs, capsys)
        grid_file = tmp_path / "grid.txt"
        grid_file.write_text("bogus = 1\n")
        code = main(["grid", "--store", str(store), "--grid", str(grid_file),
                     "--out", str(tmp_path / "r.csv")])
        assert code == 2
        assert "bogus" in capsys.readouterr().err

    def test_corrupt_store_exit_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"garbage")
        ckpt = tmp_path / "fake.ckpt"
        ckpt.write_bytes(b"also garbage")
        code = main(["evaluate", "--store", str(bad), "--ckpt", str(ckpt)])
        assert code in (1, 2)
        assert capsys.readouterr().err.startswith("error:")
