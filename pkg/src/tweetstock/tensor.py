"""Dense float64 tensors with taped reverse-mode automatic differentiation.

Every differentiable operation records itself on the thread's active
:class:`Tape` when at least one input has ``requires_grad``. Recording order
is execution order, so walking the tape backwards visits each node after all
of its consumers, which is exactly what gradient accumulation needs. One
training step owns one tape; independent tapes may run in parallel threads.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

Scalar = Union[int, float]


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


_LOCAL = threading.local()


def _tape_stack() -> list:
    stack = getattr(_LOCAL, "tapes", None)
    if stack is None:
        stack = []
        _LOCAL.tapes = stack
    return stack


def _active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense n-dimensional float64 array, optionally tracked for gradients.

    The value buffer is treated as immutable once constructed; only ``grad``
    is mutated (by :func:`backward`) and only the optimizer rebinds ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.size == 0:
            raise ShapeError(f"tensor extents must be >= 1, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.item())

    def zero_grad(self) -> None:
        self.grad = None

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub_from(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def swapaxes(self, axis1: int, axis2: int) -> "Tensor":
        return swapaxes(self, axis1, axis2)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)


@dataclass
class Node:
    """One recorded operation: inputs, output, and the rule that maps the
    output gradient to per-input gradients (None for untracked inputs)."""

    inputs: tuple
    output: Tensor
    backward_rule: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of operations for one reverse-mode sweep.

    Usable as a context manager; nesting pushes a fresh tape so independent
    graphs never interleave.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)


def _record(inputs: Sequence[Tensor], out_data: np.ndarray, backward_rule) -> Tensor:
    tape = _active_tape()
    tracked = tape is not None and any(
        isinstance(t, Tensor) and t.requires_grad for t in inputs
    )
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = tracked
    out.grad = None
    out._tape = tape if tracked else None
    if tracked:
        tape.nodes.append(Node(tuple(inputs), out, backward_rule))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    Gradients accumulate additively across fan-out and across repeated calls.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ValueError("loss was not produced by operations recorded on a tape")
    acc: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g_out = acc.get(id(node.output))
        if g_out is None:
            continue
        for tensor, g in zip(node.inputs, node.backward_rule(g_out)):
            if g is None or not isinstance(tensor, Tensor) or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in acc:
                acc[key] = acc[key] + g
            else:
                acc[key] = g
                holders[key] = tensor
    for key, g in acc.items():
        t = holders[key]
        t.grad = g if t.grad is None else t.grad + g


# -- helpers ---------------------------------------------------------------


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _check_binary_shapes(op: str, a: Tensor, b) -> None:
    if isinstance(b, Tensor) and a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape``, reversing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    squeezed = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if squeezed:
        g = g.sum(axis=squeezed, keepdims=True)
    return g.reshape(shape)


# -- elementwise -----------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    _check_binary_shapes("add", a, b)
    if isinstance(b, Tensor):
        out = a.data + b.data
        return _record((a, b), out, lambda g: (g, g))
    out = a.data + float(b)
    return _record((a,), out, lambda g: (g,))


def sub(a: Tensor, b) -> Tensor:
    _check_binary_shapes("sub", a, b)
    if isinstance(b, Tensor):
        out = a.data - b.data
        return _record((a, b), out, lambda g: (g, -g))
    out = a.data - float(b)
    return _record((a,), out, lambda g: (g,))


def sub_from(a: Scalar, b: Tensor) -> Tensor:
    out = float(a) - b.data
    return _record((b,), out, lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    _check_binary_shapes("mul", a, b)
    if isinstance(b, Tensor):
        out = a.data * b.data
        return _record((a, b), out, lambda g: (g * b.data, g * a.data))
    s = float(b)
    return _record((a,), a.data * s, lambda g: (g * s,))


def scale(a: Tensor, s: Scalar) -> Tensor:
    return mul(a, float(s))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0.0
    return _record((a,), out, lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign to avoid overflow in exp for large |x|.
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _record((a,), out, lambda g: (g * out * (1.0 - out),))


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    return _record((a,), out, lambda g: (g / a.data,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)
    return _record((a,), out, lambda g: (g * inside,))


def add_const(a: Tensor, const: np.ndarray) -> Tensor:
    """Add a constant array broadcastable to ``a`` (no gradient to the constant)."""
    const = np.asarray(const, dtype=np.float64)
    out = a.data + const
    if out.shape != a.data.shape:
        raise ShapeError(f"add_const: constant {const.shape} does not broadcast into {a.shape}")
    return _record((a,), out, lambda g: (g,))


def mul_const(a: Tensor, const: np.ndarray) -> Tensor:
    """Multiply by a constant array broadcastable to ``a`` (dropout masks etc.)."""
    const = np.asarray(const, dtype=np.float64)
    out = a.data * const
    if out.shape != a.data.shape:
        raise ShapeError(f"mul_const: constant {const.shape} does not broadcast into {a.shape}")
    return _record((a,), out, lambda g: (g * const,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a 1-D bias along the trailing axis of ``x``."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match trailing dim of {x.shape}")
    out = x.data + b.data

    def rule(g):
        return g, _unbroadcast(g, b.shape)

    return _record((x, b), out, rule)


# -- linear algebra ----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires 2-D or higher operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions of {a.shape} and {b.shape} do not match")
    out = np.matmul(a.data, b.data)

    def rule(g):
        ga = _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape)
        return ga, gb

    return _record((a, b), out, rule)


def softmax(a: Tensor, axis: int) -> Tensor:
    """Numerically stable softmax along ``axis`` (max subtraction)."""
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} out of bounds for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return _record((a,), out, rule)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the trailing axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},)")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def rule(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return _record((x, gain, bias), out, rule)


# -- reductions and structure ------------------------------------------------


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _record((a,), out, rule)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)
    return _record((a,), out, lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    out = a.data.swapaxes(axis1, axis2).copy()
    return _record((a,), out, lambda g: (g.swapaxes(axis1, axis2),))


def take(a: Tensor, index) -> Tensor:
    """Basic (slice / integer) indexing with scatter-add backward."""
    out = a.data[index]
    if np.isscalar(out) or out.size == 0:
        raise ShapeError(f"take: index {index!r} does not yield a tensor from {a.shape}")
    out = np.array(out)

    def rule(g):
        gx = np.zeros_like(a.data)
        gx[index] += g
        return (gx,)

    return _record((a,), out, rule)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def rule(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(tuple(tensors), out, rule)


# -- gradient checking -------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor,
               h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare the taped gradient of ``f`` at ``x`` against central differences.

    ``f`` must be scalar-valued and deterministic; ``x`` is perturbed in place
    one coordinate at a time, so ``f`` may simply close over it. Relative
    error per coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if not 0.0 < h <= 1e-2:
        raise ValueError(f"grad_check: h must be in (0, 1e-2], got {h}")
    x.requires_grad = True
    x.grad = None
    with Tape():
        y = f(x)
        if y.data.size != 1:
            raise ShapeError(f"grad_check: f must be scalar-valued, got shape {y.shape}")
        if not np.isfinite(y.data).all():
            raise ArithmeticError("grad_check: f(x) is not finite")
        backward(y)
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x).data.item()
        flat[i] = orig - h
        fm = f(x).data.item()
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ArithmeticError("grad_check: f(x) is not finite under perturbation")
        num_flat[i] = (fp - fm) / (2.0 * h)
    rel = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    worst = float(rel.max())
    return GradCheckReport(max_rel_err=worst, passed=worst < tol)
