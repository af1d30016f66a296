"""Model architectures: feedforward, fusion transformer, cross-attention.

Each model maps a batch (price [B,5,6], text [B,5,768]) to a per-sample
movement probability; auxiliary variants also emit one probability per window
day through a single shared head, whose final-day slot is the main output.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor
from .store import Batch

ARCHITECTURES = ("feedforward", "fusion_transformer", "cross_attention")

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1


class ConfigError(ValueError):
    """Invalid model configuration; ``field`` names the offending setting."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "fusion_transformer"
    N: int = 1
    h: int = 2
    dim_ff: int = 2048
    dim_key: int = 512
    dropout: float = 0.0
    auxiliary: bool = False
    aux_weight: float = 0.5
    causal: bool = False
    price_dim: int = 6
    embed_dim: int = 768
    seq_len: int = 5

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError("arch", f"unknown architecture {self.arch!r}, "
                                      f"expected one of {ARCHITECTURES}")
        for name in ("N", "h", "dim_ff", "dim_key", "price_dim", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(name, f"must be >= 1, got {getattr(self, name)}")
        if self.dim_key % self.h != 0:
            raise ConfigError("h", f"dim_key {self.dim_key} not divisible by h {self.h}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout", f"must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.aux_weight <= 1.0:
            raise ConfigError("aux_weight", f"must be in [0, 1], got {self.aux_weight}")
        if self.auxiliary and self.arch == "feedforward":
            raise ConfigError("auxiliary", "feedforward has no per-day representations")
        if self.seq_len != 5:
            raise ConfigError("seq_len", f"window length is fixed at 5, got {self.seq_len}")


@dataclass
class ModelOutput:
    final_prob: Tensor                 # [B], strictly inside (0, 1)
    aux_probs: Optional[Tensor] = None  # [B, 5] iff the model is auxiliary


def _check_batch(cfg: ModelConfig, batch: Batch) -> None:
    b = batch.price.shape[0]
    if batch.price.shape != (b, cfg.seq_len, cfg.price_dim):
        raise ValueError(f"price batch {batch.price.shape} does not match config "
                         f"({cfg.seq_len}, {cfg.price_dim})")
    if batch.text.shape != (b, cfg.seq_len, cfg.embed_dim):
        raise ValueError(f"text batch {batch.text.shape} does not match config "
                         f"({cfg.seq_len}, {cfg.embed_dim})")


class Model:
    """Common surface: named parameters, forward to ModelOutput."""

    cfg: ModelConfig

    def parameters(self) -> List[Tuple[str, Tensor]]:
        raise NotImplementedError

    def forward(self, batch: Batch, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> ModelOutput:
        raise NotImplementedError

    def parameter_count(self) -> int:
        return sum(p.data.size for _, p in self.parameters())

    def state_arrays(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters()}

    def load_state_arrays(self, state: Dict[str, np.ndarray]) -> None:
        for name, p in self.parameters():
            arr = state[name]
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != {p.data.shape}")
            p.data = arr.astype(np.float64).copy()


class _SharedHead:
    """One linear+sigmoid head reused for the final day and, when auxiliary,
    for every window day; the final-day auxiliary slot IS the main logit."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.head = nn.Linear(cfg.dim_key, 1, rng)

    def output_from(self, rep: Tensor) -> ModelOutput:
        b = rep.shape[0]
        if self.cfg.auxiliary:
            aux_logits = self.head(rep).reshape((b, self.cfg.seq_len))
            aux_probs = T.sigmoid(aux_logits)
            return ModelOutput(final_prob=aux_probs[:, 4], aux_probs=aux_probs)
        final_logit = self.head(rep[:, 4, :]).reshape((b,))
        return ModelOutput(final_prob=T.sigmoid(final_logit))


class FeedforwardModel(Model):
    """Flattened window -> one ReLU hidden layer of width dim_ff -> sigmoid."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.flat_dim = cfg.seq_len * (cfg.embed_dim + cfg.price_dim)
        self.hidden = nn.Linear(self.flat_dim, cfg.dim_ff, rng)
        self.out = nn.Linear(cfg.dim_ff, 1, rng)

    def forward(self, batch, training=False, rng=None):
        _check_batch(self.cfg, batch)
        b = batch.price.shape[0]
        text = Tensor(batch.text)
        price = Tensor(batch.price)
        x = T.concat([text, price], axis=2).reshape((b, self.flat_dim))
        hidden = T.relu(self.hidden(x))
        hidden = nn.dropout(hidden, self.cfg.dropout, training, rng)
        logit = self.out(hidden).reshape((b,))
        return ModelOutput(final_prob=T.sigmoid(logit))

    def parameters(self):
        return self.hidden.parameters("hidden.") + self.out.parameters("out.")


class FusionTransformerModel(Model):
    """Per-day [text|price] concat projected to dim_key, sinusoidal positions
    added, then N encoder layers; classification reads the final day."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.input_proj = nn.Linear(cfg.embed_dim + cfg.price_dim, cfg.dim_key, rng)
        self.encoder = [nn.EncoderLayer(cfg.dim_key, cfg.h, cfg.dim_ff, cfg.dropout, rng)
                        for _ in range(cfg.N)]
        self.head = _SharedHead(cfg, rng)
        self.positions = nn.positional_encoding(cfg.seq_len, cfg.dim_key)
        self.mask = nn.causal_mask(cfg.seq_len) if cfg.causal else None

    def forward(self, batch, training=False, rng=None):
        _check_batch(self.cfg, batch)
        x = T.concat([Tensor(batch.text), Tensor(batch.price)], axis=2)
        x = T.add_const(self.input_proj(x), self.positions.data)
        for layer in self.encoder:
            x = layer(x, mask=self.mask, training=training, rng=rng)
        return self.head.output_from(x)

    def parameters(self):
        params = self.input_proj.parameters("input.")
        for i, layer in enumerate(self.encoder):
            params.extend(layer.parameters(f"enc{i}."))
        params.extend(self.head.head.parameters("head."))
        return params


class CrossAttentionModel(Model):
    """Prices and tweets projected to a common dimension, four attention
    streams (self on each modality plus both cross directions), concatenated,
    fused back to dim_key, then the encoder stack."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        dk = cfg.dim_key
        self.price_proj = nn.Linear(cfg.price_dim, dk, rng)
        self.text_proj = nn.Linear(cfg.embed_dim, dk, rng)
        self.self_price = nn.MultiHeadAttention(dk, cfg.h, rng)
        self.self_text = nn.MultiHeadAttention(dk, cfg.h, rng)
        self.cross_price_query = nn.MultiHeadAttention(dk, cfg.h, rng)
        self.cross_text_query = nn.MultiHeadAttention(dk, cfg.h, rng)
        self.fuse = nn.Linear(4 * dk, dk, rng)
        self.encoder = [nn.EncoderLayer(dk, cfg.h, cfg.dim_ff, cfg.dropout, rng)
                        for _ in range(cfg.N)]
        self.head = _SharedHead(cfg, rng)
        self.positions = nn.positional_encoding(cfg.seq_len, dk)
        self.mask = nn.causal_mask(cfg.seq_len) if cfg.causal else None

    def stream_outputs(self, batch: Batch) -> Dict[str, Tensor]:
        """The four attention streams before concatenation (eval mode)."""
        _check_batch(self.cfg, batch)
        p = T.add_const(self.price_proj(Tensor(batch.price)), self.positions.data)
        x = T.add_const(self.text_proj(Tensor(batch.text)), self.positions.data)
        return {
            "self_price": self.self_price(p, p, p, mask=self.mask),
            "self_text": self.self_text(x, x, x, mask=self.mask),
            "cross_price_query": self.cross_price_query(p, x, x, mask=self.mask),
            "cross_text_query": self.cross_text_query(x, p, p, mask=self.mask),
        }

    def forward(self, batch, training=False, rng=None):
        streams = self.stream_outputs(batch)
        combined = T.concat([streams["self_price"], streams["self_text"],
                             streams["cross_price_query"], streams["cross_text_query"]],
                            axis=2)
        x = self.fuse(combined)
        for layer in self.encoder:
            x = layer(x, mask=self.mask, training=training, rng=rng)
        return self.head.output_from(x)

    def parameters(self):
        params = self.price_proj.parameters("price_proj.")
        params.extend(self.text_proj.parameters("text_proj."))
        params.extend(self.self_price.parameters("self_price."))
        params.extend(self.self_text.parameters("self_text."))
        params.extend(self.cross_price_query.parameters("cross_pq."))
        params.extend(self.cross_text_query.parameters("cross_tq."))
        params.extend(self.fuse.parameters("fuse."))
        for i, layer in enumerate(self.encoder):
            params.extend(layer.parameters(f"enc{i}."))
        params.extend(self.head.head.parameters("head."))
        return params


_MODEL_CLASSES = {
    "feedforward": FeedforwardModel,
    "fusion_transformer": FusionTransformerModel,
    "cross_attention": CrossAttentionModel,
}


def build_model(cfg: ModelConfig, seed: int = 0) -> Model:
    rng = np.random.default_rng(seed)
    return _MODEL_CLASSES[cfg.arch](cfg, rng)


# -- checkpoints -------------------------------------------------------------


def _config_to_lines(cfg: ModelConfig) -> str:
    return "\n".join(f"{f.name}={getattr(cfg, f.name)}" for f in fields(cfg))


def _config_from_lines(blob: str) -> ModelConfig:
    kwargs = {}
    casts = {f.name: f.type for f in fields(ModelConfig)}
    for line in blob.splitlines():
        key, _, value = line.partition("=")
        if key not in casts:
            raise ConfigError(key, "unknown checkpoint config field")
        if key == "arch":
            kwargs[key] = value
        elif key in ("dropout", "aux_weight"):
            kwargs[key] = float(value)
        elif key in ("auxiliary", "causal"):
            kwargs[key] = value == "True"
        else:
            kwargs[key] = int(value)
    return ModelConfig(**kwargs)


def save_checkpoint(model: Model, path) -> None:
    """Config header plus named float64 parameter tensors, little endian."""
    params = model.parameters()
    config_blob = _config_to_lines(model.cfg).encode("utf-8")
    with open(path, "wb") as out:
        out.write(CKPT_MAGIC)
        out.write(struct.pack("<II", CKPT_VERSION, len(config_blob)))
        out.write(config_blob)
        out.write(struct.pack("<I", len(params)))
        for name, p in params:
            raw = name.encode("utf-8")
            out.write(struct.pack("<I", len(raw)))
            out.write(raw)
            out.write(struct.pack("<I", p.data.ndim))
            out.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
            out.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path, seed: int = 0) -> Model:
    with open(path, "rb") as f:
        if f.read(4) != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic)")
        version, config_len = struct.unpack("<II", f.read(8))
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        cfg = _config_from_lines(f.read(config_len).decode("utf-8"))
        (count,) = struct.unpack("<I", f.read(4))
        state: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            size = int(np.prod(shape)) if shape else 1
            state[name] = np.frombuffer(f.read(8 * size), dtype="<f8").reshape(shape).copy()
    model = build_model(cfg, seed=seed)
    model.load_state_arrays(state)
    return model
