"""Differentiable elementwise, reduction, shape, and resampling operations.

All functions take and return :class:`Tensor`; scalars may be plain Python
numbers. Broadcasting follows numpy rules within rank 4 (gradients are summed
back over broadcast axes).
"""

from __future__ import annotations

import functools

import numpy as np

from ..errors import ContractError, DimensionError
from .tensor import Tensor, apply_op


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full((1, 1, 1, 1), float(x)), dtype=like.data.dtype)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast up from ``shape``."""
    if g.shape == tuple(shape):
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def add(x, y):
    x = x if isinstance(x, Tensor) else _as_tensor(x, y)
    y = _as_tensor(y, x)
    return apply_op(
        "add",
        (x, y),
        x.data + y.data,
        (lambda g: _unbroadcast(g, x.shape), lambda g: _unbroadcast(g, y.shape)),
    )


def mul(x, y):
    x = x if isinstance(x, Tensor) else _as_tensor(x, y)
    y = _as_tensor(y, x)
    return apply_op(
        "mul",
        (x, y),
        x.data * y.data,
        (
            lambda g: _unbroadcast(g * y.data, x.shape),
            lambda g: _unbroadcast(g * x.data, y.shape),
        ),
    )


def neg(x: Tensor):
    return apply_op("neg", (x,), -x.data, (lambda g: -g,))


def sub(x, y):
    if not isinstance(y, Tensor):
        return add(x, -float(y))
    return add(x, neg(y))


def absolute(x: Tensor):
    sign = np.sign(x.data)
    return apply_op("abs", (x,), np.abs(x.data), (lambda g: g * sign,))


def square(x: Tensor):
    return apply_op("square", (x,), x.data * x.data, (lambda g: g * (2.0 * x.data),))


def reduce_mean(x: Tensor, axes=None):
    """Mean over ``axes`` (all axes when None), keeping rank 4."""
    axes = tuple(range(4)) if axes is None else tuple(axes)
    out = x.data.mean(axis=axes, keepdims=True)
    count = x.data.size // out.size

    def grad(g):
        return np.broadcast_to(g, x.shape) / count

    return apply_op("mean", (x,), out, (grad,))


def reduce_sum(x: Tensor, axes=None):
    axes = tuple(range(4)) if axes is None else tuple(axes)
    out = x.data.sum(axis=axes, keepdims=True)

    def grad(g):
        return np.broadcast_to(g, x.shape) * np.ones((), dtype=g.dtype)

    return apply_op("sum", (x,), out, (grad,))


def concat(tensors, axis: int = 1):
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def make_grad(i):
        sel = [slice(None)] * 4
        sel[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        sel = tuple(sel)
        return lambda g: g[sel]

    return apply_op("concat", tuple(tensors), data, tuple(make_grad(i) for i in range(len(tensors))))


def narrow(x: Tensor, axis: int, start: int, length: int):
    """Contiguous slice along one axis; gradient zero-pads back."""
    if start < 0 or start + length > x.shape[axis]:
        raise DimensionError(
            f"narrow range [{start}, {start + length}) exceeds axis {axis} of extent {x.shape[axis]}"
        )
    sel = [slice(None)] * 4
    sel[axis] = slice(start, start + length)
    sel = tuple(sel)

    def grad(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[sel] = g
        return full

    return apply_op("narrow", (x,), x.data[sel], (grad,))


def leaky_relu(x: Tensor, slope: float = 0.2):
    if not 0.0 < slope < 1.0:
        raise ContractError(f"leaky_relu slope must lie in (0,1), got {slope}")
    factor = np.where(x.data > 0, x.data.dtype.type(1.0), x.data.dtype.type(slope))
    return apply_op("leaky_relu", (x,), x.data * factor, (lambda g: g * factor,))


def tanh(x: Tensor):
    out = np.tanh(x.data)
    return apply_op("tanh", (x,), out, (lambda g: g * (1.0 - out * out),))


def sigmoid(x: Tensor):
    out = _sigmoid_raw(x.data)
    return apply_op("sigmoid", (x,), out, (lambda g: g * out * (1.0 - out),))


def _sigmoid_raw(a: np.ndarray) -> np.ndarray:
    # exp on the negative half only, so large |a| never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(x: Tensor):
    """log(1 + exp(x)), computed stably."""
    out = np.logaddexp(np.zeros((), dtype=x.data.dtype), x.data)
    sig = _sigmoid_raw(x.data)
    return apply_op("softplus", (x,), out, (lambda g: g * sig,))


def activation(x: Tensor, kind: str, slope: float = 0.2):
    """Dispatch by name; ``kind`` is one of leaky_relu, tanh, sigmoid."""
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ContractError(f"unknown activation kind {kind!r}")


def clamp(x: Tensor, lo: float, hi: float):
    """Clip values; gradient passes through wherever lo <= x <= hi."""
    inside = ((x.data >= lo) & (x.data <= hi)).astype(x.data.dtype)
    return apply_op("clamp", (x,), np.clip(x.data, lo, hi), (lambda g: g * inside,))


@functools.lru_cache(maxsize=128)
def _interp_matrix_cached(n_out: int, n_in: int, dtype_name: str) -> np.ndarray:
    dtype = np.dtype(dtype_name)
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    if n_out == 1:
        coords = np.zeros(1, dtype=np.float64)
    else:
        coords = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
    base = np.minimum(np.floor(coords).astype(np.int64), n_in - 2)
    frac = coords - base
    rows = np.arange(n_out)
    m[rows, base] = (1.0 - frac).astype(dtype)
    m[rows, base + 1] += frac.astype(dtype)
    return m


def _interp_matrix(n_out: int, n_in: int, dtype) -> np.ndarray:
    return _interp_matrix_cached(int(n_out), int(n_in), np.dtype(dtype).name)


def resize_raw(data: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Align-corners bilinear resize of a raw (B,C,H,W) array."""
    _, _, h, w = data.shape
    if (new_h, new_w) == (h, w):
        return data
    my = _interp_matrix(new_h, h, data.dtype)
    mx = _interp_matrix(new_w, w, data.dtype)
    return np.einsum("oh,pw,bchw->bcop", my, mx, data, optimize=True)


def bilinear_resize(x: Tensor, new_h: int, new_w: int):
    """Differentiable align-corners bilinear resize.

    Corner samples map exactly onto corner samples, so resizing to the same
    size is an exact identity and landmark coordinates scale by
    (new-1)/(old-1) consistently with the resampled grid.
    """
    if new_h < 1 or new_w < 1:
        raise ContractError(f"resize target must be >= 1, got {new_h}x{new_w}")
    _, _, h, w = x.shape
    if (new_h, new_w) == (h, w):
        return apply_op("resize_id", (x,), x.data, (lambda g: g,))
    my = _interp_matrix(new_h, h, x.data.dtype)
    mx = _interp_matrix(new_w, w, x.data.dtype)
    out = np.einsum("oh,pw,bchw->bcop", my, mx, x.data, optimize=True)

    def grad(g):
        return np.einsum("oh,pw,bcop->bchw", my, mx, g, optimize=True)

    return apply_op("resize", (x,), out, (grad,))


def _tensor_op_add(self, other):
    return add(self, other)


def _tensor_op_radd(self, other):
    return add(self, other)


def _tensor_op_sub(self, other):
    return sub(self, other)


def _tensor_op_rsub(self, other):
    return add(neg(self), other)


def _tensor_op_mul(self, other):
    return mul(self, other)


def _tensor_op_neg(self):
    return neg(self)


def _tensor_op_truediv(self, other):
    if isinstance(other, Tensor):
        raise ContractError("tensor/tensor division is not supported; divide by a scalar")
    return mul(self, 1.0 / float(other))


Tensor.__add__ = _tensor_op_add
Tensor.__radd__ = _tensor_op_radd
Tensor.__sub__ = _tensor_op_sub
Tensor.__rsub__ = _tensor_op_rsub
Tensor.__mul__ = _tensor_op_mul
Tensor.__rmul__ = _tensor_op_mul
Tensor.__neg__ = _tensor_op_neg
Tensor.__truediv__ = _tensor_op_truediv
Tensor.abs = absolute
Tensor.mean = reduce_mean
Tensor.sum = reduce_sum
