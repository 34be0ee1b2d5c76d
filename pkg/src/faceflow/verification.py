"""Float64 finite-difference battery over every differentiable operation.

``standard_battery`` checks each primitive op, each loss, and the composed
transfer/removal/discriminator graphs (including the full training objective)
at a small resolution. Network heads get a small random perturbation first so
flow values sit away from integer sampling coordinates, where the bilinear
kernel's one-sided gradient makes finite differences undefined by design.
"""

from __future__ import annotations

import numpy as np

from .autodiff.conv import conv2d, conv_transpose2d
from .autodiff.gradcheck import CheckResult, GradCheckReport, check_gradients
from .autodiff.ops import bilinear_resize, clamp, leaky_relu, sigmoid, softplus, tanh
from .autodiff.tensor import constant, parameter
from .losses import (
    LossWeights,
    binary_cross_entropy,
    cls_loss,
    cycle_loss,
    full_objective,
    landmark_loss,
    lsgan_d_loss,
    lsgan_g_loss,
    sample_at_points,
    tv_loss,
)
from .networks import NetworkConfig, build_networks
from .numerics import using_dtype
from .warpblend import AppearanceResidual, AttentionMask, FlowField, blend, compose_residual, warp_bilinear


def _projected(out, u):
    return (out * u).mean()


def _noninteger_flow(rng, shape, span=1.5):
    f = rng.uniform(-span, span, size=shape) + 0.3
    f += (np.abs(f - np.round(f)) < 0.05) * 0.11  # keep clear of integer coordinates
    return f


def _perturb(params, rng, scale=0.05):
    for _, p in params:
        p.data = p.data + rng.normal(scale=scale, size=p.shape)


def standard_battery(size: int = 16, width: int = 4, samples_per_tensor: int = 6, seed: int = 0) -> GradCheckReport:
    """Finite-difference verdicts for all ops and composed graphs (float64)."""
    report = GradCheckReport()
    with using_dtype(np.float64):
        rng = np.random.default_rng(np.random.PCG64(seed))
        kw = dict(rng=np.random.default_rng(np.random.PCG64(seed + 1)))

        x = parameter(rng.normal(size=(2, 3, 8, 8)))
        k = parameter(rng.normal(size=(4, 3, 3, 3)) * 0.4)
        b = parameter(rng.normal(size=(1, 4, 1, 1)) * 0.2)
        u = constant(rng.normal(size=(2, 4, 4, 4)))
        report.checks.append(
            check_gradients("conv2d", lambda: _projected(conv2d(x, k, b, 2, 1), u), [("input", x), ("kernel", k), ("bias", b)], **kw)
        )

        xt = parameter(rng.normal(size=(2, 3, 4, 4)))
        kt = parameter(rng.normal(size=(3, 2, 3, 3)) * 0.4)
        bt = parameter(rng.normal(size=(1, 2, 1, 1)) * 0.2)
        ut = constant(rng.normal(size=(2, 2, 7, 7)))
        report.checks.append(
            check_gradients(
                "conv_transpose2d",
                lambda: _projected(conv_transpose2d(xt, kt, bt, 2, 1), ut),
                [("input", xt), ("kernel", kt), ("bias", bt)],
                **kw,
            )
        )

        xa = parameter(rng.normal(size=(2, 3, 5, 5)))
        ua = constant(rng.normal(size=(2, 3, 5, 5)))
        for name, fn in (
            ("leaky_relu", lambda: _projected(leaky_relu(xa, 0.2), ua)),
            ("tanh", lambda: _projected(tanh(xa), ua)),
            ("sigmoid", lambda: _projected(sigmoid(xa), ua)),
            ("softplus", lambda: _projected(softplus(xa), ua)),
            ("clamp", lambda: _projected(clamp(xa, -0.9, 0.9), ua)),
        ):
            report.checks.append(check_gradients(name, fn, [("input", xa)], **kw))

        xr = parameter(rng.normal(size=(1, 2, 5, 7)))
        ur = constant(rng.normal(size=(1, 2, 9, 11)))
        report.checks.append(
            check_gradients("bilinear_resize", lambda: _projected(bilinear_resize(xr, 9, 11), ur), [("input", xr)], **kw)
        )

        src = parameter(rng.uniform(-1, 1, size=(1, 3, size, size)))
        flw = parameter(_noninteger_flow(rng, (1, 2, size, size)))
        uw = constant(rng.normal(size=(1, 3, size, size)))
        report.checks.append(
            check_gradients(
                "warp_bilinear",
                lambda: _projected(warp_bilinear(src, FlowField(flw)), uw),
                [("source", src), ("flow", flw)],
                samples_per_tensor=48,
                **kw,
            )
        )

        pts = rng.uniform(1.3, size - 2.3, size=(1, 5, 2))
        u_pts = constant(rng.normal(size=(1, 2, 5, 1)))
        report.checks.append(
            check_gradients(
                "sample_at_points",
                lambda: _projected(sample_at_points(flw, pts), u_pts),
                [("field", flw)],
                samples_per_tensor=48,
                **kw,
            )
        )

        tgt = parameter(rng.uniform(-1, 1, size=(1, 3, size, size)))
        logits = parameter(rng.normal(size=(1, 1, size, size)))
        resid = parameter(rng.uniform(-0.5, 0.5, size=(1, 3, size, size)))

        def warp_blend_compose():
            warped = warp_bilinear(src, FlowField(flw))
            mixed = blend(tgt, warped, AttentionMask(sigmoid(logits)))
            return _projected(compose_residual(mixed, AppearanceResidual(tanh(resid), 0.7)), uw)

        report.checks.append(
            check_gradients(
                "warp_blend_compose",
                warp_blend_compose,
                [("target", tgt), ("source", src), ("flow", flw), ("mask_logits", logits), ("residual", resid)],
                samples_per_tensor=24,
                **kw,
            )
        )

        d_real = parameter(rng.normal(size=(2, 1, 4, 4)))
        d_fake = parameter(rng.normal(size=(2, 1, 4, 4)))
        report.checks.append(
            check_gradients("lsgan_d_loss", lambda: lsgan_d_loss(d_real, d_fake), [("real", d_real), ("fake", d_fake)], **kw)
        )
        report.checks.append(check_gradients("lsgan_g_loss", lambda: lsgan_g_loss(d_fake), [("fake", d_fake)], **kw))

        logit = parameter(rng.normal(size=(4, 1, 1, 1)))
        report.checks.append(check_gradients("cls_loss", lambda: cls_loss(logit, 1), [("logits", logit)], **kw))
        targets = rng.integers(0, 2, size=(4, 1, 1, 1)).astype(float)
        report.checks.append(
            check_gradients("binary_cross_entropy", lambda: binary_cross_entropy(logit, targets), [("logits", logit)], **kw)
        )

        ximg = parameter(rng.uniform(-1, 1, size=(2, 3, 6, 6)))
        yimg = parameter(rng.uniform(-1, 1, size=(2, 3, 6, 6)))
        report.checks.append(
            check_gradients("cycle_loss", lambda: cycle_loss(ximg, yimg), [("x", ximg), ("y", yimg)], **kw)
        )

        lm_t = rng.uniform(1.3, size - 2.3, size=(1, 6, 2))
        lm_s = lm_t + rng.uniform(-1.2, 1.2, size=(1, 6, 2))
        report.checks.append(
            check_gradients(
                "landmark_loss", lambda: landmark_loss(FlowField(flw), lm_t, lm_s), [("flow", flw)], samples_per_tensor=48, **kw
            )
        )
        report.checks.append(
            check_gradients("tv_loss", lambda: tv_loss(FlowField(flw)), [("flow", flw)], samples_per_tensor=48, **kw)
        )

        report.checks.extend(_composed_checks(size, width, samples_per_tensor, seed))
    return report


def _composed_checks(size, width, samples_per_tensor, seed):
    rng = np.random.default_rng(np.random.PCG64(seed + 2))
    kw = dict(samples_per_tensor=samples_per_tensor, rng=np.random.default_rng(np.random.PCG64(seed + 3)))
    cfg = NetworkConfig(image_size=size, base_width=width, alpha=0.8, seed=seed)
    transfer, removal, disc = build_networks(cfg)
    _perturb(transfer.parameters() + removal.parameters() + disc.parameters(), rng, scale=0.02)
    # bias the flow channels to half-pixel offsets so every sampled warp
    # coordinate stays clear of the integer lattice during the checks
    head_bias = transfer.flow_net.up[2].b
    head_bias.data = head_bias.data + np.array([0.5, 0.37, 0.0]).reshape(1, 3, 1, 1)

    a = parameter(rng.uniform(-0.9, 0.9, size=(1, 3, size, size)))
    bimg = parameter(rng.uniform(-0.9, 0.9, size=(1, 3, size, size)))
    u_img = constant(rng.normal(size=(1, 3, size, size)))
    u_flow = constant(rng.normal(size=(1, 2, size, size)))
    u_mask = constant(rng.normal(size=(1, 1, size, size)))

    def transfer_graph():
        out = transfer.forward(a, bimg)
        return (
            _projected(out.result, u_img)
            + _projected(out.flow.data, u_flow)
            + _projected(out.mask.data, u_mask)
        )

    checks = [
        check_gradients("transfer_module", transfer_graph, transfer.parameters() + [("target", a), ("source", bimg)], **kw)
    ]

    def removal_graph():
        return _projected(removal.forward(bimg), u_img)

    checks.append(check_gradients("removal_module", removal_graph, removal.parameters() + [("input", bimg)], **kw))

    u_patch = constant(rng.normal(size=(1, 1, size // 8, size // 8)))

    def disc_graph():
        patch, logit = disc.forward(a)
        return _projected(patch, u_patch) + logit.mean()

    checks.append(check_gradients("discriminator", disc_graph, disc.parameters() + [("input", a)], **kw))

    lm_a = rng.uniform(1.3, size - 2.3, size=(1, 6, 2))
    lm_b = lm_a + rng.uniform(-1.0, 1.0, size=(1, 6, 2))
    weights = LossWeights()

    def objective_graph():
        out_ab = transfer.forward(a, bimg)
        removed = removal.forward(bimg)
        cycled = removal.forward(out_ab.result)
        out_back = transfer.forward(removed, out_ab.result)
        rec = cycle_loss(cycled, a) + cycle_loss(out_back.result, bimg)
        patch_b, cls_b = disc.forward(out_ab.result)
        patch_a, cls_a = disc.forward(removed)
        terms = {
            "adv_g": lsgan_g_loss(patch_b),
            "adv_f": lsgan_g_loss(patch_a),
            "cls_f": cls_loss(cls_b, 1) + cls_loss(cls_a, 0),
            "rec": rec,
            "lm": (landmark_loss(out_ab.flow, lm_a, lm_b) + landmark_loss(out_back.flow, lm_b, lm_a)) * 0.5,
            "tv": (tv_loss(out_ab.flow) + tv_loss(out_back.flow)) * 0.5,
        }
        real_patch, real_cls = disc.forward(bimg)
        d_loss = lsgan_d_loss(real_patch, patch_b) + cls_loss(real_cls, 1)
        return full_objective(terms, weights) + d_loss

    all_params = transfer.parameters() + removal.parameters() + disc.parameters()
    checks.append(
        check_gradients("full_training_objective", objective_graph, all_params + [("target", a), ("source", bimg)], **kw)
    )
    return checks
