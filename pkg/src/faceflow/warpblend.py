"""Backward bilinear warping, attention blending, and residual composition.

Coordinate convention: a flow field stores per-pixel displacements in pixel
units, channel 0 horizontal (x, width axis) and channel 1 vertical (y, height
axis). The warp is backward: output pixel (row, col) samples the source at
(col + flow_x, row + flow_y) with bilinear weights over the 4-pixel
neighborhood. Sampling positions outside the image clamp to the border, which
keeps the operator differentiable everywhere; at exact integer positions the
gradient takes the one-sided value of the bilinear kernel.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .autodiff.ops import bilinear_resize, clamp, sigmoid
from .autodiff.tensor import Tensor, apply_op, constant
from .errors import ContractError, DimensionError


@dataclass
class FlowField:
    """Pixel-unit displacement field of shape (B, 2, H, W).

    Displacement magnitudes are clamped to max(H, W) at construction; the
    clamp is differentiable and inactive for any sane field.
    """

    data: Tensor

    def __init__(self, data: Tensor):
        if data.shape[1] != 2:
            raise DimensionError(f"flow field needs 2 channels on axis 1, got shape {data.shape}")
        if not np.all(np.isfinite(data.data)):
            raise ContractError("flow field contains non-finite displacements")
        bound = float(max(data.shape[2], data.shape[3]))
        if np.abs(data.data).max(initial=0.0) > bound:
            data = clamp(data, -bound, bound)
        self.data = data

    @property
    def shape(self):
        return self.data.shape

    @staticmethod
    def zeros(batch: int, h: int, w: int, dtype=None) -> "FlowField":
        return FlowField(constant(np.zeros((batch, 2, h, w)), dtype=dtype))


@dataclass
class AttentionMask:
    """Per-pixel blend weights in [0, 1], shape (B, 1, H, W)."""

    data: Tensor

    def __init__(self, data: Tensor):
        if data.shape[1] != 1:
            raise DimensionError(f"attention mask needs 1 channel on axis 1, got shape {data.shape}")
        lo = data.data.min(initial=0.0)
        hi = data.data.max(initial=1.0)
        if lo < 0.0 or hi > 1.0:
            raise ContractError(f"attention mask values outside [0,1]: range [{lo}, {hi}]")
        self.data = data

    @property
    def shape(self):
        return self.data.shape

    @staticmethod
    def from_logits(logits: Tensor) -> "AttentionMask":
        return AttentionMask(sigmoid(logits))


@dataclass
class AppearanceResidual:
    """Additive correction image plus its blend weight alpha >= 0."""

    data: Tensor
    alpha: float = 1.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ContractError(f"residual alpha must be >= 0, got {self.alpha}")

    @property
    def shape(self):
        return self.data.shape


def warp_bilinear(source: Tensor, flow: FlowField) -> Tensor:
    """Backward-warp ``source`` by ``flow`` with bilinear resampling.

    Differentiable with respect to both the source values and the flow;
    out-of-range samples clamp to the border (their flow gradient is zero).
    """
    ft = flow.data if isinstance(flow, FlowField) else FlowField(flow).data
    b, c, h, w = source.shape
    if ft.shape[0] != b or ft.shape[2:] != (h, w):
        raise DimensionError(f"flow shape {ft.shape} does not align with source {source.shape}")
    src = source.data
    dtype = src.dtype

    fx = ft.data[:, 0]
    fy = ft.data[:, 1]
    sx = np.arange(w, dtype=dtype)[None, None, :] + fx
    sy = np.arange(h, dtype=dtype)[None, :, None] + fy
    in_x = (sx >= 0) & (sx <= w - 1)
    in_y = (sy >= 0) & (sy <= h - 1)
    sx = np.clip(sx, 0.0, w - 1)
    sy = np.clip(sy, 0.0, h - 1)

    x0 = np.minimum(np.floor(sx).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(sy).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (sx - x0)[:, None]
    wy = (sy - y0)[:, None]

    bi = np.arange(b)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    v00 = src[bi, ci, y0[:, None], x0[:, None]]
    v01 = src[bi, ci, y0[:, None], x1[:, None]]
    v10 = src[bi, ci, y1[:, None], x0[:, None]]
    v11 = src[bi, ci, y1[:, None], x1[:, None]]

    w00 = (1.0 - wy) * (1.0 - wx)
    w01 = (1.0 - wy) * wx
    w10 = wy * (1.0 - wx)
    w11 = wy * wx
    out = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11

    def grad_source(g):
        flat = np.zeros(b * c * h * w, dtype=dtype)
        base = (np.arange(b)[:, None, None, None] * c + np.arange(c)[None, :, None, None]) * (h * w)
        for yi, xi, wgt in ((y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11)):
            idx = (base + yi[:, None] * w + xi[:, None]).ravel()
            flat += np.bincount(idx, weights=np.broadcast_to(g * wgt, (b, c, h, w)).ravel(),
                                minlength=flat.size)
        return flat.reshape(b, c, h, w)

    def grad_flow(g):
        dx = ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10)) * g
        dy = ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01)) * g
        gf = np.empty((b, 2, h, w), dtype=dtype)
        gf[:, 0] = dx.sum(axis=1) * in_x
        gf[:, 1] = dy.sum(axis=1) * in_y
        return gf

    return apply_op("warp_bilinear", (source, ft), out, (grad_source, grad_flow))


def blend(target: Tensor, warped_source: Tensor, mask: AttentionMask) -> Tensor:
    """Pointwise convex combination: mask selects target, (1-mask) the warp."""
    m = mask.data if isinstance(mask, AttentionMask) else AttentionMask(mask).data
    if target.shape != warped_source.shape or m.shape[2:] != target.shape[2:]:
        raise DimensionError(
            f"blend inputs misaligned: target {target.shape}, warped {warped_source.shape}, mask {m.shape}"
        )
    return m * target + (1.0 - m) * warped_source


def compose_residual(blended: Tensor, residual: AppearanceResidual) -> Tensor:
    """Final image: alpha * residual + blended (left unclamped for the loss graph)."""
    if residual.data.shape != blended.shape:
        raise DimensionError(
            f"residual shape {residual.data.shape} does not match blended {blended.shape}"
        )
    if residual.alpha == 0.0:
        return blended
    return residual.alpha * residual.data + blended


def clamp_for_output(image: Tensor) -> Tensor:
    """Clamp to [-1, 1]; only for serialization, never inside training losses."""
    return clamp(image, -1.0, 1.0)


def _resolve_scale(scale, h: int, w: int) -> tuple[int, int, float]:
    frac = Fraction(scale).limit_denominator(10**6)
    if frac < 1:
        raise ContractError(f"upscale factor must be >= 1, got {scale}")
    new_h = frac * h
    new_w = frac * w
    if new_h.denominator != 1 or new_w.denominator != 1:
        raise ContractError(f"scale {scale} does not give an integral resolution from {h}x{w}")
    return int(new_h), int(new_w), float(frac)


def upscale_transfer(
    flow: FlowField, mask: AttentionMask, residual: AppearanceResidual, scale
) -> tuple[FlowField, AttentionMask, AppearanceResidual]:
    """Resize a transfer's geometry to a higher resolution.

    Mask and residual are plainly resized; the flow is resized *and* its
    displacement values are multiplied by the scale so they stay in pixel
    units of the new resolution.
    """
    h, w = flow.shape[2], flow.shape[3]
    new_h, new_w, factor = _resolve_scale(scale, h, w)
    if (new_h, new_w) == (h, w):
        return flow, mask, residual
    flow_up = bilinear_resize(flow.data, new_h, new_w) * factor
    mask_up = bilinear_resize(mask.data, new_h, new_w)
    res_up = bilinear_resize(residual.data, new_h, new_w)
    return FlowField(flow_up), AttentionMask(mask_up), AppearanceResidual(res_up, residual.alpha)


def apply_transfer(
    target_hr: Tensor,
    source_hr: Tensor,
    flow: FlowField,
    mask: AttentionMask,
    residual: AppearanceResidual,
) -> Tensor:
    """Apply low-resolution transfer geometry to a full-resolution image pair."""
    if target_hr.shape != source_hr.shape:
        raise DimensionError(
            f"high-res pair disagrees: target {target_hr.shape} vs source {source_hr.shape}"
        )
    h_lo, w_lo = flow.shape[2], flow.shape[3]
    h_hi, w_hi = target_hr.shape[2], target_hr.shape[3]
    scale_h = Fraction(h_hi, h_lo)
    scale_w = Fraction(w_hi, w_lo)
    if scale_h != scale_w:
        raise DimensionError(
            f"anisotropic upscale {h_lo}x{w_lo} -> {h_hi}x{w_hi} is not supported"
        )
    flow_up, mask_up, res_up = upscale_transfer(flow, mask, residual, scale_h)
    warped = warp_bilinear(source_hr, flow_up)
    blended = blend(target_hr, warped, mask_up)
    return compose_residual(blended, res_up)
