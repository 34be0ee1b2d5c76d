"""Sub-network builders and forward passes for transfer, removal, and discrimination.

Every generator-style network is the same encoder-decoder: three stride-2
convolutions, three residual blocks at the bottleneck, three stride-2
transposed convolutions (4/4/3 kernels, leaky-relu 0.2). The published
architecture names only this 3/3/3 layout; channel widths, activations, and
initialization are configuration. Designated output heads are zero-initialized
so an untrained pipeline is an exact analytic function: zero flow, 0.5 mask,
zero residuals.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff.conv import conv2d, conv_transpose2d
from .autodiff.ops import concat, leaky_relu, narrow, sigmoid, tanh
from .autodiff.tensor import Tensor, constant, parameter
from .errors import ConfigError, ContractError, DimensionError
from .numerics import default_dtype
from .warpblend import (
    AppearanceResidual,
    AttentionMask,
    FlowField,
    blend,
    compose_residual,
    warp_bilinear,
)

LEAK = 0.2


@dataclass
class NetworkConfig:
    image_size: int = 64
    base_width: int = 16
    alpha: float = 1.0
    seed: int = 0
    use_flow: bool = True
    use_refine: bool = True

    def validate(self):
        if self.image_size < 16 or self.image_size % 8 != 0:
            raise ConfigError(
                f"image_size must be >= 16 and divisible by 8 for the 3-level stride plan, "
                f"got {self.image_size}"
            )
        if self.base_width < 1:
            raise ConfigError(f"base_width must be >= 1, got {self.base_width}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")


def _uniform_weight(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    # uniform on +-sqrt(6 / ((1 + slope^2) * fan_in)): preserves activation
    # variance under leaky-relu(0.2); biases zero
    bound = float(np.sqrt(6.0 / ((1.0 + LEAK * LEAK) * fan_in)))
    return rng.uniform(-bound, bound, size=shape)


class _Layer:
    """One (transposed) convolution with its bias."""

    def __init__(self, rng, name, c_in, c_out, k, stride, pad, transpose=False, zero=False):
        self.name = name
        self.stride = stride
        self.pad = pad
        self.transpose = transpose
        shape = (c_in, c_out, k, k) if transpose else (c_out, c_in, k, k)
        if zero:
            w = np.zeros(shape)
        else:
            w = _uniform_weight(rng, shape, c_in * k * k)
        dt = default_dtype()
        self.w = parameter(w, dtype=dt)
        self.b = parameter(np.zeros((1, c_out, 1, 1)), dtype=dt)

    def __call__(self, x: Tensor) -> Tensor:
        op = conv_transpose2d if self.transpose else conv2d
        return op(x, self.w, self.b, stride=self.stride, pad=self.pad)

    def parameters(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class EncoderDecoder:
    """3 down / 3 residual / 3 up; optional U-Net skip concatenations."""

    def __init__(self, rng, name, c_in, c_out, width, skip=False, zero_head=True):
        self.name = name
        self.skip = skip
        w = width
        # 2x2 stride-2 kernels halve/double resolution exactly and keep the
        # window traffic of the full-resolution layers small; the residual
        # stack supplies the receptive field at the bottleneck.
        self.down = [
            _Layer(rng, f"{name}.down0", c_in, w, 2, 2, 0),
            _Layer(rng, f"{name}.down1", w, 2 * w, 2, 2, 0),
            _Layer(rng, f"{name}.down2", 2 * w, 4 * w, 2, 2, 0),
        ]
        self.res = [
            (
                _Layer(rng, f"{name}.res{i}a", 4 * w, 4 * w, 3, 1, 1),
                _Layer(rng, f"{name}.res{i}b", 4 * w, 4 * w, 3, 1, 1),
            )
            for i in range(3)
        ]
        up0_in = 4 * w
        up1_in = (2 + 2) * w if skip else 2 * w
        up2_in = (1 + 1) * w if skip else w
        self.up = [
            _Layer(rng, f"{name}.up0", up0_in, 2 * w, 2, 2, 0, transpose=True),
            _Layer(rng, f"{name}.up1", up1_in, w, 2, 2, 0, transpose=True),
            _Layer(rng, f"{name}.up2", up2_in, c_out, 2, 2, 0, transpose=True, zero=zero_head),
        ]

    def forward(self, x: Tensor) -> Tensor:
        skips = []
        h = x
        for layer in self.down:
            h = leaky_relu(layer(h), LEAK)
            skips.append(h)
        for a, b in self.res:
            h = h + b(leaky_relu(a(h), LEAK))
        h = leaky_relu(self.up[0](h), LEAK)
        if self.skip:
            h = concat([h, skips[1]], axis=1)
        h = leaky_relu(self.up[1](h), LEAK)
        if self.skip:
            h = concat([h, skips[0]], axis=1)
        return self.up[2](h)

    def parameters(self):
        out = []
        for layer in self.down:
            out += layer.parameters()
        for a, b in self.res:
            out += a.parameters() + b.parameters()
        for layer in self.up:
            out += layer.parameters()
        return out


@dataclass
class TransferResult:
    """Everything a transfer forward produces, kept for losses and ablations."""

    result: Tensor
    flow: FlowField
    mask: AttentionMask
    residual: AppearanceResidual
    blended: Tensor
    warped: Tensor


class TransferModule:
    """Attribute transfer: flow/mask head plus residual refinement.

    The flow and mask come from one shared encoder-decoder whose head emits
    three channels (two displacement, one mask logit); the refinement network
    reads the blended composite and emits a tanh-bounded residual scaled by
    alpha.
    """

    def __init__(self, rng, width: int, alpha: float, use_flow=True, use_refine=True):
        self.flow_net = EncoderDecoder(rng, "flow_net", 6, 3, width)
        self.refine_net = EncoderDecoder(rng, "refine_net", 3, 3, width)
        self.alpha = float(alpha)
        self.use_flow = use_flow
        self.use_refine = use_refine

    def forward(self, target: Tensor, source: Tensor) -> TransferResult:
        if target.shape != source.shape:
            raise DimensionError(
                f"target {target.shape} and source {source.shape} must match"
            )
        head = self.flow_net.forward(concat([target, source], axis=1))
        raw_flow = narrow(head, 1, 0, 2)
        mask_logit = narrow(head, 1, 2, 1)
        if self.use_flow:
            # linear head: any saturating bound here turns into an absorbing
            # state once the landmark objective overshoots (the restoring
            # gradient dies with the saturation); the trainer's gradient
            # clipping keeps the dynamics inside the warp's live region
            flow = FlowField(raw_flow)
        else:
            b, _, h, w = raw_flow.shape
            flow = FlowField.zeros(b, h, w, dtype=raw_flow.data.dtype)
        mask = AttentionMask(sigmoid(mask_logit))
        warped = warp_bilinear(source, flow)
        blended = blend(target, warped, mask)
        if self.use_refine:
            residual = AppearanceResidual(tanh(self.refine_net.forward(blended)), self.alpha)
        else:
            residual = AppearanceResidual(
                constant(np.zeros(blended.shape), dtype=blended.data.dtype), self.alpha
            )
        result = compose_residual(blended, residual)
        _fail_on_nonfinite(result, "transfer forward")
        return TransferResult(result, flow, mask, residual, blended, warped)

    def parameters(self):
        return [(f"G.{n}", p) for n, p in self.flow_net.parameters() + self.refine_net.parameters()]


class RemovalModule:
    """Attribute removal: U-Net predicting a residual added to its input.

    The residual is tanh-bounded so repeated cycle compositions stay in a
    bounded range; the zero-initialized head still makes the untrained module
    an exact identity.
    """

    def __init__(self, rng, width: int):
        self.unet = EncoderDecoder(rng, "unet", 3, 3, width, skip=True)

    def forward(self, image: Tensor) -> Tensor:
        out = image + tanh(self.unet.forward(image))
        _fail_on_nonfinite(out, "removal forward")
        return out

    def parameters(self):
        return [(f"F.{n}", p) for n, p in self.unet.parameters()]


class Discriminator:
    """Patch-grid realness scores plus one attribute logit per image."""

    def __init__(self, rng, width: int):
        w = width
        self.trunk = [
            _Layer(rng, "trunk0", 3, w, 3, 2, 1),
            _Layer(rng, "trunk1", w, 2 * w, 3, 2, 1),
            _Layer(rng, "trunk2", 2 * w, 4 * w, 3, 2, 1),
        ]
        self.src_head = _Layer(rng, "src_head", 4 * w, 1, 3, 1, 1)
        self.cls_head = _Layer(rng, "cls_head", 4 * w, 1, 3, 1, 1)

    def forward(self, x: Tensor):
        h = x
        for layer in self.trunk:
            h = leaky_relu(layer(h), LEAK)
        patch = self.src_head(h)
        logit = self.cls_head(h).mean(axes=(2, 3))
        return patch, logit

    def parameters(self):
        out = []
        for layer in self.trunk:
            out += layer.parameters()
        out += self.src_head.parameters() + self.cls_head.parameters()
        return [(f"D.{n}", p) for n, p in out]


def _fail_on_nonfinite(t: Tensor, where: str):
    if not np.all(np.isfinite(t.data)):
        bad = int(np.count_nonzero(~np.isfinite(t.data)))
        raise ContractError(f"{where}: {bad} non-finite activations (shape {t.shape})")


def build_networks(config: NetworkConfig):
    """Seeded construction of the transfer, removal, and discriminator modules.

    Two builds from the same config are bitwise-identical: parameters are
    drawn from one generator stream in a fixed order. The discriminator runs
    at half the generator width: a full-width critic dominates the toy-scale
    game and destabilizes the warp.
    """
    config.validate()
    rng = np.random.default_rng(np.random.PCG64(config.seed))
    transfer = TransferModule(rng, config.base_width, config.alpha, config.use_flow, config.use_refine)
    removal = RemovalModule(rng, config.base_width)
    disc = Discriminator(rng, max(config.base_width // 2, 4))
    return transfer, removal, disc


def parameter_count(module) -> int:
    return sum(int(np.prod(p.shape)) for _, p in module.parameters())
