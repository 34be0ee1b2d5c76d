"""Training objectives: adversarial, classification, cycle, landmark, and smoothness.

Scale conventions (so magnitudes stay resolution-independent):
  - image L1 / least-squares GAN terms are means over all elements;
  - the landmark term sums over landmarks (it is a per-face alignment energy)
    and averages over the batch;
  - the smoothness term averages squared forward differences within each
    (channel, direction) family and sums the four family means.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .autodiff.ops import narrow, softplus
from .autodiff.tensor import Tensor, apply_op, constant
from .errors import ContractError, DimensionError
from .warpblend import FlowField


@dataclass
class LossWeights:
    """Non-negative multipliers for the combined objective.

    The published objective gives no weights; these defaults were validated
    on the synthetic acceptance benchmark and are all configurable. The
    landmark and smoothness terms live in squared-pixel units, orders of
    magnitude above the unit-scale image terms, hence their small weights.
    """

    w_adv_g: float = 1.0
    w_adv_f: float = 1.0
    w_cls_r: float = 1.0
    w_cls_f: float = 1.0
    w_rec: float = 10.0
    w_lm: float = 0.01
    w_tv: float = 0.3

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ContractError(f"loss weight {f.name} must be finite and >= 0, got {v}")

    def as_dict(self) -> dict:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


@dataclass
class LandmarkSet:
    """Ordered (x, y) pixel coordinates; index k always means the same point."""

    points: np.ndarray

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise DimensionError(f"landmarks must be (count, 2), got {pts.shape}")
        self.points = pts

    def __len__(self):
        return self.points.shape[0]


def _stack_landmarks(sets, count_like=None) -> np.ndarray:
    if isinstance(sets, np.ndarray):
        arr = np.asarray(sets, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        return arr
    if isinstance(sets, LandmarkSet):
        return sets.points[None]
    return np.stack([s.points if isinstance(s, LandmarkSet) else np.asarray(s, dtype=np.float64) for s in sets])


def sample_at_points(field: Tensor, points: np.ndarray) -> Tensor:
    """Bilinearly sample a (B, C, H, W) tensor at fractional (x, y) points.

    ``points`` has shape (B, K, 2); the result is (B, C, K, 1) and is
    differentiable with respect to the field values.
    """
    b, c, h, w = field.shape
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (b, pts.shape[1], 2):
        raise DimensionError(f"points must be (batch, count, 2) with batch {b}, got {pts.shape}")
    px = pts[..., 0]
    py = pts[..., 1]
    if (px < 0).any() or (px > w - 1).any() or (py < 0).any() or (py > h - 1).any():
        raise ContractError("sample point outside the image bounds")
    x0 = np.minimum(np.floor(px).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(py).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (px - x0)[:, None, :]  # (B,1,K)
    wy = (py - y0)[:, None, :]
    bi = np.arange(b)[:, None, None]
    ci = np.arange(c)[None, :, None]
    v00 = field.data[bi, ci, y0[:, None], x0[:, None]]
    v01 = field.data[bi, ci, y0[:, None], x1[:, None]]
    v10 = field.data[bi, ci, y1[:, None], x0[:, None]]
    v11 = field.data[bi, ci, y1[:, None], x1[:, None]]
    w00 = (1 - wy) * (1 - wx)
    w01 = (1 - wy) * wx
    w10 = wy * (1 - wx)
    w11 = wy * wx
    out = (w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11)[..., None].astype(field.data.dtype)

    def grad_field(g):
        gk = g[..., 0]  # (B,C,K)
        flat = np.zeros(b * c * h * w, dtype=field.data.dtype)
        base = (np.arange(b)[:, None, None] * c + np.arange(c)[None, :, None]) * (h * w)
        for yi, xi, wgt in ((y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11)):
            idx = np.broadcast_to(base + yi[:, None] * w + xi[:, None], gk.shape).ravel()
            flat += np.bincount(idx, weights=(gk * wgt).ravel(), minlength=flat.size)
        return flat.reshape(b, c, h, w)

    return apply_op("sample_at_points", (field,), out, (grad_field,))


def lsgan_d_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Least-squares discriminator loss over patch grids: real -> 1, fake -> 0."""
    real_term = ((d_real - 1.0) * (d_real - 1.0)).mean()
    fake_term = (d_fake * d_fake).mean()
    return real_term + fake_term


def lsgan_g_loss(d_fake: Tensor) -> Tensor:
    """Least-squares generator loss: fake patches pushed toward 1."""
    return ((d_fake - 1.0) * (d_fake - 1.0)).mean()


def cls_loss(logits: Tensor, label: int) -> Tensor:
    """Binary cross-entropy with logits against a domain label in {0, 1}."""
    if label not in (0, 1):
        raise ContractError(f"label must be 0 or 1, got {label!r}")
    if label == 1:
        return softplus(-logits).mean()
    return softplus(logits).mean()


def binary_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean sigmoid BCE against a per-sample 0/1 target array."""
    t = np.asarray(targets, dtype=logits.data.dtype).reshape(logits.shape)
    if ((t != 0) & (t != 1)).any():
        raise ContractError("targets must be 0 or 1")
    tc = constant(t)
    return (softplus(logits) * (1.0 - tc) + softplus(-logits) * tc).mean()


def cycle_loss(reconstructed: Tensor, original: Tensor) -> Tensor:
    """Mean absolute difference; the caller sums the two cycle directions."""
    if reconstructed.shape != original.shape:
        raise DimensionError(
            f"cycle loss shapes differ: {reconstructed.shape} vs {original.shape}"
        )
    return (reconstructed - original).abs().mean()


def landmark_loss(flow: FlowField, lm_target, lm_source) -> Tensor:
    """Squared alignment error of the flow at the target's landmarks.

    The flow is sampled bilinearly at each (fractional) target landmark and
    must equal the source-minus-target displacement there. Summed over
    landmarks, averaged over the batch.
    """
    ft = flow.data if isinstance(flow, FlowField) else FlowField(flow).data
    b, _, h, w = ft.shape
    tgt = _stack_landmarks(lm_target)
    src = _stack_landmarks(lm_source)
    if tgt.shape != src.shape:
        raise ContractError(f"landmark counts differ: {tgt.shape} vs {src.shape}")
    if tgt.shape[0] != b:
        raise ContractError(f"landmark batch {tgt.shape[0]} != flow batch {b}")
    if (tgt[..., 0] < 0).any() or (tgt[..., 0] > w - 1).any() or (tgt[..., 1] < 0).any() or (tgt[..., 1] > h - 1).any():
        raise ContractError("target landmark outside the flow grid")
    sampled = sample_at_points(ft, tgt)  # (B, 2, K, 1)
    disp = np.transpose(src - tgt, (0, 2, 1))[..., None]  # (B, 2, K, 1)
    diff = sampled - constant(disp.astype(ft.data.dtype))
    per_sample = (diff * diff).sum(axes=(1, 2, 3))  # (B,1,1,1)
    return per_sample.mean()


def tv_loss(flow: FlowField) -> Tensor:
    """Squared forward differences of each flow channel, mean per family."""
    ft = flow.data if isinstance(flow, FlowField) else FlowField(flow).data
    _, _, h, w = ft.shape
    total = None
    for ch in range(2):
        comp = narrow(ft, 1, ch, 1)
        for axis, extent in ((3, w), (2, h)):
            if extent < 2:
                continue
            a = narrow(comp, axis, 1, extent - 1)
            bdy = narrow(comp, axis, 0, extent - 1)
            d = a - bdy
            term = (d * d).mean()
            total = term if total is None else total + term
    if total is None:
        return constant(np.zeros((1, 1, 1, 1)), dtype=ft.data.dtype)
    return total


TERM_NAMES = ("adv_g", "adv_f", "cls_r", "cls_f", "rec", "lm", "tv")
_WEIGHT_BY_TERM = {
    "adv_g": "w_adv_g",
    "adv_f": "w_adv_f",
    "cls_r": "w_cls_r",
    "cls_f": "w_cls_f",
    "rec": "w_rec",
    "lm": "w_lm",
    "tv": "w_tv",
}


def full_objective(terms: dict, weights: LossWeights) -> Tensor:
    """Weighted sum of the seven objective terms.

    ``terms`` maps term names (see TERM_NAMES) to scalar tensors or floats;
    missing terms count as zero. With unit weights this is the plain sum of
    the adversarial, classification, reconstruction, and flow terms.
    """
    unknown = set(terms) - set(TERM_NAMES)
    if unknown:
        raise ContractError(f"unknown objective terms: {sorted(unknown)}")
    total = None
    for term_name, value in terms.items():
        wval = getattr(weights, _WEIGHT_BY_TERM[term_name])
        if isinstance(value, Tensor):
            piece = value * wval
        else:
            piece = constant(np.full((1, 1, 1, 1), float(value) * wval))
        total = piece if total is None else total + piece
    if total is None:
        return constant(np.zeros((1, 1, 1, 1)))
    return total
