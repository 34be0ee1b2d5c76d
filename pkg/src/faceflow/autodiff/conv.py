"""2-D convolution and its transpose.

Both directions are built from two primitives: ``_gather`` (sliding-window
contraction, used by the conv forward pass and the transposed conv's input
gradient) and ``_scatter`` (its exact adjoint, used by the conv input gradient
and the transposed conv forward pass). Sharing the primitives makes the
adjoint identity between the two ops hold to the last bit.

Window tensors are materialized per batch item in (batch, c*k*k, h*w) layout:
every slice copy and every batched GEMM then runs on contiguous axes, which
is what keeps a pure-numpy training step fast. The forward window tensor is
cached on the node for the kernel gradient.

Kernel layouts follow the usual convention: conv kernels are
(c_out, c_in, k, k); transposed-conv kernels are (c_in, c_out, k, k).
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor, apply_op


def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv_transpose_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n - 1) * stride - 2 * pad + k


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    b, c, h, w = x.shape
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, :, pad : pad + h, pad : pad + w] = x
    return out


def _windows(x: np.ndarray, k: int, stride: int, pad: int, n_h: int, n_w: int) -> np.ndarray:
    """(b, c*k*k, n_h*n_w) window tensor; row (c, i, j), column (h, w)."""
    xp = _pad_hw(x, pad)
    b, c = x.shape[0], x.shape[1]
    cols = np.empty((b, c, k, k, n_h, n_w), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * n_h : stride, j : j + stride * n_w : stride]
    return cols.reshape(b, c * k * k, n_h * n_w)


def _gather(x: np.ndarray, kernel: np.ndarray, stride: int, pad: int, cols_out=None) -> np.ndarray:
    """Correlate: (b, c_in, h, w) x (c_out, c_in, k, k) -> (b, c_out, nh, nw)."""
    c_out, c_in, k, _ = kernel.shape
    n_h = conv_output_size(x.shape[2], k, stride, pad)
    n_w = conv_output_size(x.shape[3], k, stride, pad)
    cols = _windows(x, k, stride, pad, n_h, n_w)
    if cols_out is not None:
        cols_out.append(cols)
    out = np.matmul(kernel.reshape(c_out, c_in * k * k), cols)
    return out.reshape(x.shape[0], c_out, n_h, n_w)


def _scatter(y: np.ndarray, kernel: np.ndarray, stride: int, pad: int, out_hw) -> np.ndarray:
    """Adjoint of ``_gather``: (b, c_from, h, w) x (c_from, c_to, k, k) -> (b, c_to, *out_hw)."""
    c_from, c_to, k, _ = kernel.shape
    b, _, h, w = y.shape
    out_h, out_w = out_hw
    k_mat = kernel.reshape(c_from, c_to * k * k)
    cols = np.matmul(k_mat.T, y.reshape(b, c_from, h * w)).reshape(b, c_to, k, k, h, w)
    full = np.zeros((b, c_to, out_h + 2 * pad, out_w + 2 * pad), dtype=y.dtype)
    for i in range(k):
        for j in range(k):
            full[:, :, i : i + stride * h : stride, j : j + stride * w : stride] += cols[:, :, i, j]
    if pad:
        return np.ascontiguousarray(full[:, :, pad : pad + out_h, pad : pad + out_w])
    return full


def _weight_grad_from_cols(small: np.ndarray, cols: np.ndarray, c_big: int, k: int) -> np.ndarray:
    """(b, c_a, h, w) x window tensor of the other operand -> (c_a, c_big, k, k)."""
    b, c_a = small.shape[0], small.shape[1]
    prods = np.matmul(small.reshape(b, c_a, -1), cols.transpose(0, 2, 1))
    return np.add.reduce(prods, axis=0).reshape(c_a, c_big, k, k)


def _weight_grad(small: np.ndarray, big: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    cols = _windows(big, k, stride, pad, small.shape[2], small.shape[3])
    return _weight_grad_from_cols(small, cols, big.shape[1], k)


def _check_common(name, x, kernel, bias, stride, pad, in_channel_axis):
    if kernel.data.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise DimensionError(f"{name}: kernel must be (c, c, k, k) with square k, got {kernel.shape}")
    if stride < 1:
        raise DimensionError(f"{name}: stride must be >= 1, got {stride}")
    if pad < 0:
        raise DimensionError(f"{name}: pad must be >= 0, got {pad}")
    expected_in = kernel.shape[in_channel_axis]
    if x.shape[1] != expected_in:
        raise DimensionError(
            f"{name}: input channel axis 1 has extent {x.shape[1]}, kernel expects {expected_in}"
        )


def _check_bias(name, bias, c_out):
    if bias is not None and bias.shape != (1, c_out, 1, 1):
        raise DimensionError(
            f"{name}: bias must have shape (1, {c_out}, 1, 1) on channel axis 1, got {bias.shape}"
        )


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Strided cross-correlation with optional per-channel bias."""
    _check_common("conv2d", x, kernel, bias, stride, pad, in_channel_axis=1)
    c_out, c_in, k, _ = kernel.shape
    _check_bias("conv2d", bias, c_out)
    out_h = conv_output_size(x.shape[2], k, stride, pad)
    out_w = conv_output_size(x.shape[3], k, stride, pad)
    if out_h < 1 or out_w < 1:
        raise DimensionError(
            f"conv2d: output spatial axes would be {out_h}x{out_w} for input {x.shape[2]}x{x.shape[3]}"
        )
    track = [] if (kernel.requires_grad or kernel.node is not None) else None
    out = _gather(x.data, kernel.data, stride, pad, cols_out=track)
    if bias is not None:
        out += bias.data
    k_data = kernel.data
    in_hw = (x.shape[2], x.shape[3])

    def grad_x(g):
        return _scatter(g, k_data, stride, pad, in_hw)

    if track:
        cached_cols = track[0]

        def grad_k(g):
            return _weight_grad_from_cols(g, cached_cols, c_in, k)

    else:
        x_data = x.data

        def grad_k(g):
            return _weight_grad(g, x_data, k, stride, pad)

    parents = [x, kernel]
    fns = [grad_x, grad_k]
    if bias is not None:
        parents.append(bias)
        fns.append(lambda g: g.sum(axis=(0, 2, 3), keepdims=True))
    return apply_op("conv2d", tuple(parents), out, tuple(fns))


def conv_transpose2d(
    x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0
) -> Tensor:
    """Transposed convolution; the forward map is the adjoint of conv2d."""
    _check_common("conv_transpose2d", x, kernel, bias, stride, pad, in_channel_axis=0)
    _, c_out, k, _ = kernel.shape
    _check_bias("conv_transpose2d", bias, c_out)
    out_h = conv_transpose_output_size(x.shape[2], k, stride, pad)
    out_w = conv_transpose_output_size(x.shape[3], k, stride, pad)
    if out_h < 1 or out_w < 1:
        raise DimensionError(
            f"conv_transpose2d: output spatial axes would be {out_h}x{out_w} for input "
            f"{x.shape[2]}x{x.shape[3]}"
        )
    out = _scatter(x.data, kernel.data, stride, pad, (out_h, out_w))
    if bias is not None:
        out += bias.data
    x_data, k_data = x.data, kernel.data

    def grad_x(g):
        return _gather(g, k_data, stride, pad)

    def grad_k(g):
        return _weight_grad(x_data, g, k, stride, pad)

    parents = [x, kernel]
    fns = [grad_x, grad_k]
    if bias is not None:
        parents.append(bias)
        fns.append(lambda g: g.sum(axis=(0, 2, 3), keepdims=True))
    return apply_op("conv_transpose2d", tuple(parents), out, tuple(fns))


def conv2d_raw(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None, stride: int, pad: int) -> np.ndarray:
    """Plain-array conv forward for frozen inference paths (no graph)."""
    out = _gather(x, kernel, stride, pad)
    if bias is not None:
        out += bias
    return out
