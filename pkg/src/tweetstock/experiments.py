"""Hyperparameter grid expansion, isolated run orchestration, result tables."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

from .evaluation import EvalReport, evaluate
from .models import ConfigError, ModelConfig, build_model
from .store import SampleStore
from .training import TrainConfig, TrainReport, train

log = logging.getLogger(__name__)

GRID_ARCHES = ("feedforward", "fusion_transformer", "cross_attention",
               "aux_fusion_transformer", "aux_cross_attention")


@dataclass(frozen=True)
class Grid:
    """Candidate lists, one per hyperparameter axis."""

    arch: Sequence[str] = ("fusion_transformer",)
    N: Sequence[int] = (1,)
    h: Sequence[int] = (2,)
    dim_ff: Sequence[int] = (2048,)
    dim_key: Sequence[int] = (512,)
    dropout: Sequence[float] = (0.0,)
    # the published auxiliary runs report 0.3 and 0.5; sweep both by default
    aux_weight: Sequence[float] = (0.3, 0.5)
    lr: Sequence[float] = (1e-5,)
    seed: Sequence[int] = (0,)

    def combo_count(self) -> int:
        total = 1
        for f in dataclasses.fields(self):
            total *= len(getattr(self, f.name))
        return total


@dataclass(frozen=True, order=True)
class ExperimentConfig:
    """One grid point: architecture plus size, regularization, and optimizer
    settings."""

    arch: str
    N: int
    h: int
    dim_ff: int
    dim_key: int
    dropout: float
    aux_weight: float
    lr: float
    seed: int

    def to_model_config(self, embed_dim: int = 768, price_dim: int = 6) -> ModelConfig:
        auxiliary = self.arch.startswith("aux_")
        base_arch = self.arch[4:] if auxiliary else self.arch
        return ModelConfig(arch=base_arch, N=self.N, h=self.h, dim_ff=self.dim_ff,
                           dim_key=self.dim_key, dropout=self.dropout,
                           auxiliary=auxiliary, aux_weight=self.aux_weight,
                           embed_dim=embed_dim, price_dim=price_dim)


def parse_grid_file(path) -> Grid:
    """Plain-text grid: one ``key = v1, v2, ...`` line per axis; '#' comments."""
    values: Dict[str, List[str]] = {}
    field_names = {f.name for f in dataclasses.fields(Grid)}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, rest = line.partition("=")
            key = key.strip()
            if not sep or key not in field_names:
                raise ValueError(f"{path}:{lineno}: unknown grid key {key!r}")
            values[key] = [v.strip() for v in rest.split(",") if v.strip()]
    kwargs = {}
    for name, raw_list in values.items():
        if name == "arch":
            kwargs[name] = tuple(raw_list)
        elif name in ("N", "h", "dim_ff", "dim_key", "seed"):
            kwargs[name] = tuple(int(v) for v in raw_list)
        else:
            kwargs[name] = tuple(float(v) for v in raw_list)
    return Grid(**kwargs)


def expand_grid(grid: Grid) -> List[ExperimentConfig]:
    """Deterministic Cartesian product; invalid combinations are skipped with
    a logged reason. Raises when nothing valid remains."""
    configs: List[ExperimentConfig] = []
    axes = [grid.arch, grid.N, grid.h, grid.dim_ff, grid.dim_key, grid.dropout,
            grid.aux_weight, grid.lr, grid.seed]
    for combo in itertools.product(*axes):
        cfg = ExperimentConfig(*combo)
        if cfg.arch not in GRID_ARCHES:
            log.warning("skipping grid point %s: unknown architecture", (combo,))
            continue
        try:
            cfg.to_model_config()
        except ConfigError as exc:
            log.warning("skipping grid point %s: %s", combo, exc)
            continue
        configs.append(cfg)
    if not configs:
        raise ValueError("grid expansion produced no valid configuration")
    return configs


def derive_run_seed(base_seed: int, cfg: ExperimentConfig) -> int:
    """Stable per-run seed; adding grid axes elsewhere never shifts it."""
    canonical = f"{base_seed}|{cfg.arch}|{cfg.N}|{cfg.h}|{cfg.dim_ff}|" \
                f"{cfg.dim_key}|{cfg.dropout}|{cfg.aux_weight}|{cfg.lr}|{cfg.seed}"
    digest = hashlib.blake2b(canonical.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") % (2 ** 31)


@dataclass
class RunRecord:
    config: ExperimentConfig
    val_report: Optional[EvalReport] = None
    test_report: Optional[EvalReport] = None
    train_report: Optional[TrainReport] = None
    wall_seconds: float = 0.0
    failed: bool = False
    error: str = ""


def run_one(cfg: ExperimentConfig, store: SampleStore,
            base_train_cfg: TrainConfig) -> RunRecord:
    record = RunRecord(config=cfg)
    started = time.perf_counter()
    try:
        run_seed = derive_run_seed(base_train_cfg.seed, cfg)
        train_cfg = dataclasses.replace(base_train_cfg, learning_rate=cfg.lr,
                                        seed=run_seed)
        model_cfg = cfg.to_model_config(embed_dim=store.embed_dim)
        model = build_model(model_cfg, seed=run_seed)
        record.train_report = train(model, store, train_cfg)
        record.val_report = evaluate(model, store, "val")
        record.test_report = evaluate(model, store, "test")
    except Exception as exc:  # a diverging run must not kill the grid
        record.failed = True
        record.error = f"{type(exc).__name__}: {exc}"
        log.warning("grid run %s failed: %s", cfg, record.error)
    record.wall_seconds = time.perf_counter() - started
    return record


def run_grid(configs: Sequence[ExperimentConfig], store: SampleStore,
             train_cfg: TrainConfig, parallelism: int = 1) -> List[RunRecord]:
    """Train and evaluate every config independently; results come back in a
    deterministic order regardless of scheduling."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    if parallelism == 1:
        records = [run_one(cfg, store, train_cfg) for cfg in configs]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(lambda c: run_one(c, store, train_cfg), configs))
    return sorted(records, key=lambda r: r.config)


def _format_row(record: RunRecord) -> List[str]:
    cfg = record.config
    feedforward = cfg.arch == "feedforward"
    auxiliary = cfg.arch.startswith("aux_")
    cells = [
        cfg.arch,
        "" if feedforward else str(cfg.N),
        "" if feedforward else str(cfg.h),
        str(cfg.dim_ff),
        "" if feedforward else str(cfg.dim_key),
        f"{cfg.dropout:g}",
        f"{cfg.aux_weight:g}" if auxiliary else "",
    ]
    if record.failed or record.test_report is None:
        cells.extend(["failed", "failed"])
    else:
        cells.extend([f"{record.test_report.accuracy:.3f}",
                      f"{record.test_report.mcc:.5f}"])
    return cells


def render_table(records: Sequence[RunRecord], sort_by_mcc: bool = False) -> str:
    """Plain-text results table (test-split metrics)."""
    if not records:
        raise ValueError("no run records to render")
    if sort_by_mcc:
        records = sorted(records, key=lambda r: (r.test_report.mcc
                                                 if r.test_report else float("-inf")),
                         reverse=True)
    header = ["Model", "N", "h", "dim_ff", "dim_key", "dropout", "aux_weight",
              "Accuracy", "MCC"]
    rows = [header] + [_format_row(r) for r in records]
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


# wall-clock stays on RunRecord only; the CSV must be byte-identical across
# reruns with fixed inputs and seeds
CSV_COLUMNS = ["arch", "N", "h", "dim_ff", "dim_key", "dropout", "aux_weight",
               "lr", "seed", "val_accuracy", "val_mcc", "test_accuracy",
               "test_mcc", "stopped_epoch", "best_epoch", "status"]


def _csv_row(record: RunRecord) -> List:
    cfg = record.config
    row = [cfg.arch, cfg.N, cfg.h, cfg.dim_ff, cfg.dim_key, cfg.dropout,
           cfg.aux_weight, cfg.lr, cfg.seed]
    if record.failed or record.test_report is None:
        row += [""] * 6 + [f"failed: {record.error}"]
    else:
        row += [f"{record.val_report.accuracy:.3f}", f"{record.val_report.mcc:.5f}",
                f"{record.test_report.accuracy:.3f}", f"{record.test_report.mcc:.5f}",
                record.train_report.stopped_epoch, record.train_report.best_epoch,
                "ok"]
    return row


def write_csv(records: Sequence[RunRecord], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for record in records:
            writer.writerow(_csv_row(record))
