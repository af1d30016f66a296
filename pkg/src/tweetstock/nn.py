"""Neural layers: linear, multi-head attention, positional encoding, encoder
layers, and inverted dropout. These compose every model architecture."""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

MASK_FILL = -1e9  # additive pre-softmax value for blocked positions


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear:
    """Affine map x -> x @ W + b over the trailing axis."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator,
                 bias: bool = True):
        self.weight = Tensor(glorot_uniform(rng, fan_in, fan_out), requires_grad=True)
        self.bias = Tensor(np.zeros(fan_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return T.add_bias(y, self.bias) if self.bias is not None else y

    def parameters(self, prefix: str = "") -> list:
        params = [(prefix + "weight", self.weight)]
        if self.bias is not None:
            params.append((prefix + "bias", self.bias))
        return params


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability p and rescale survivors by
    1/(1-p) at train time; identity at eval time."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return T.mul_const(x, mask)


def causal_mask(seq_len: int) -> np.ndarray:
    """Boolean [T, T] mask blocking attention to future positions."""
    return np.triu(np.ones((seq_len, seq_len), dtype=bool), k=1)


def positional_encoding(seq_len: int, dk: int) -> Tensor:
    """Sinusoidal position table: PE[pos, 2i] = sin(pos / 10000^(2i/dk)),
    PE[pos, 2i+1] = cos of the same argument. Constant, not trained."""
    if dk % 2 != 0:
        raise ValueError(f"positional encoding needs an even dimension, got {dk}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    freq = np.power(10000.0, -np.arange(0, dk, 2, dtype=np.float64) / dk)
    table = np.zeros((seq_len, dk))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return Tensor(table)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor,
                         mask: Optional[np.ndarray] = None,
                         return_weights: bool = False):
    """softmax(q k^T / sqrt(d)) v along the source axis.

    q is [..., T, d]; k and v are [..., S, d]. ``mask`` is boolean with True
    marking blocked source positions, broadcastable to [..., T, S].
    """
    d = q.shape[-1]
    if k.shape[-1] != d:
        raise ShapeError(f"attention: query dim {d} != key dim {k.shape[-1]}")
    scores = T.scale(q @ k.swapaxes(-1, -2), 1.0 / np.sqrt(d))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        expect = scores.shape[-2:]
        if mask.shape[-2:] != expect:
            raise ShapeError(f"attention mask {mask.shape} does not match scores {scores.shape}")
        scores = T.add_const(scores, np.where(mask, MASK_FILL, 0.0))
    weights = T.softmax(scores, axis=-1)
    out = weights @ v
    if return_weights:
        return out, weights
    return out


class MultiHeadAttention:
    """h parallel attention heads on dk/h slices of projected q, k, v."""

    def __init__(self, dk: int, num_heads: int, rng: np.random.Generator):
        if dk % num_heads != 0:
            raise ValueError(f"model dim {dk} not divisible by {num_heads} heads")
        self.dk = dk
        self.num_heads = num_heads
        self.head_dim = dk // num_heads
        self.q_proj = Linear(dk, dk, rng)
        # a key bias shifts every score in a row equally, which softmax
        # cancels exactly; the parameter would be inert, so omit it
        self.k_proj = Linear(dk, dk, rng, bias=False)
        self.v_proj = Linear(dk, dk, rng)
        self.out_proj = Linear(dk, dk, rng)

    def _split_heads(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.reshape((b, t, self.num_heads, self.head_dim)).swapaxes(1, 2)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor,
                 mask: Optional[np.ndarray] = None) -> Tensor:
        if q.shape[-1] != self.dk:
            raise ShapeError(f"attention block built for dim {self.dk}, got {q.shape}")
        b, t = q.shape[0], q.shape[1]
        qh = self._split_heads(self.q_proj(q))
        kh = self._split_heads(self.k_proj(k))
        vh = self._split_heads(self.v_proj(v))
        ctx = scaled_dot_attention(qh, kh, vh, mask=mask)
        merged = ctx.swapaxes(1, 2).reshape((b, t, self.dk))
        return self.out_proj(merged)

    def parameters(self, prefix: str = "") -> list:
        params = []
        for name, layer in (("q.", self.q_proj), ("k.", self.k_proj),
                            ("v.", self.v_proj), ("out.", self.out_proj)):
            params.extend(layer.parameters(prefix + name))
        return params


class EncoderLayer:
    """Post-norm transformer encoder sublayers:
    y = LN(x + Dropout(MHA(x))), out = LN(y + Dropout(FFN(y)))."""

    def __init__(self, dk: int, num_heads: int, dim_ff: int, dropout_rate: float,
                 rng: np.random.Generator):
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {dropout_rate}")
        self.attention = MultiHeadAttention(dk, num_heads, rng)
        self.ff1 = Linear(dk, dim_ff, rng)
        self.ff2 = Linear(dim_ff, dk, rng)
        self.norm1_gain = Tensor(np.ones(dk), requires_grad=True)
        self.norm1_bias = Tensor(np.zeros(dk), requires_grad=True)
        self.norm2_gain = Tensor(np.ones(dk), requires_grad=True)
        self.norm2_bias = Tensor(np.zeros(dk), requires_grad=True)
        self.dropout_rate = dropout_rate

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None,
                 training: bool = False,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
        if training and self.dropout_rate > 0.0 and rng is None:
            raise ValueError("training with dropout requires an rng")
        attended = self.attention(x, x, x, mask=mask)
        attended = dropout(attended, self.dropout_rate, training, rng)
        y = T.layer_norm(x + attended, self.norm1_gain, self.norm1_bias)
        hidden = self.ff2(T.relu(self.ff1(y)))
        hidden = dropout(hidden, self.dropout_rate, training, rng)
        return T.layer_norm(y + hidden, self.norm2_gain, self.norm2_bias)

    def parameters(self, prefix: str = "") -> list:
        params = self.attention.parameters(prefix + "attn.")
        params.extend(self.ff1.parameters(prefix + "ff1."))
        params.extend(self.ff2.parameters(prefix + "ff2."))
        params.extend([
            (prefix + "norm1.gain", self.norm1_gain),
            (prefix + "norm1.bias", self.norm1_bias),
            (prefix + "norm2.gain", self.norm2_gain),
            (prefix + "norm2.bias", self.norm2_bias),
        ])
        return params
