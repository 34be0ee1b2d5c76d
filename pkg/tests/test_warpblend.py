import numpy as np
import pytest

from faceflow.autodiff import backward, check_gradients, constant, parameter
from faceflow.autodiff.ops import resize_raw
from faceflow.errors import ContractError, DimensionError
from faceflow.synthdata import generate_dataset, random_spec, render_face
from faceflow.warpblend import (
    AppearanceResidual,
    AttentionMask,
    FlowField,
    apply_transfer,
    blend,
    clamp_for_output,
    compose_residual,
    upscale_transfer,
    warp_bilinear,
)


def _flow(arr):
    return FlowField(constant(np.asarray(arr, dtype=np.float64)))


def test_zero_flow_identity_bitwise(rng):
    for _ in range(10):
        src = constant(rng.uniform(-1, 1, size=(2, 3, 6, 7)))
        out = warp_bilinear(src, FlowField.zeros(2, 6, 7))
        assert np.array_equal(out.data, src.data)


def test_integer_shift_with_border_clamp():
    src = constant(np.array([[[[1.0, 2.0, 3.0]]]]))
    f = np.zeros((1, 2, 1, 3))
    f[0, 0] = 1.0
    out = warp_bilinear(src, _flow(f))
    assert out.data.ravel().tolist() == [2.0, 3.0, 3.0]


def test_half_pixel_average():
    src = constant(np.array([[[[0.0, 2.0]]]]))
    f = np.zeros((1, 2, 1, 2))
    f[0, 0, 0, 0] = 0.5
    out = warp_bilinear(src, _flow(f))
    assert out.data[0, 0, 0, 0] == 1.0


def test_warp_shape_mismatch():
    src = constant(np.zeros((1, 3, 4, 4)))
    with pytest.raises(DimensionError):
        warp_bilinear(src, FlowField.zeros(1, 5, 5))


def test_flow_channel_contract():
    with pytest.raises(DimensionError):
        FlowField(constant(np.zeros((1, 3, 4, 4))))


def test_flow_magnitude_clamped():
    f = np.zeros((1, 2, 4, 4))
    f[0, 0] = 100.0
    ff = FlowField(constant(f))
    assert np.abs(ff.data.data).max() <= 4.0


def test_warp_flow_gradcheck(rng):
    src = constant(rng.uniform(-1, 1, size=(1, 2, 6, 6)))
    flow = parameter(rng.uniform(-1.2, 1.2, size=(1, 2, 6, 6)) + 0.3)
    u = constant(rng.normal(size=(1, 2, 6, 6)))
    res = check_gradients(
        "warp_flow", lambda: (warp_bilinear(src, FlowField(flow)) * u).mean(), [("flow", flow)], rng=rng
    )
    assert res.max_rel_err <= 1e-4


def test_warp_source_gradcheck(rng):
    src = parameter(rng.uniform(-1, 1, size=(1, 2, 6, 6)))
    flow = constant(rng.uniform(-1.2, 1.2, size=(1, 2, 6, 6)) + 0.3)
    u = constant(rng.normal(size=(1, 2, 6, 6)))
    res = check_gradients(
        "warp_src", lambda: (warp_bilinear(src, FlowField(flow)) * u).mean(), [("src", src)], rng=rng
    )
    assert res.max_rel_err <= 1e-4


def test_blend_mask_one_and_zero(rng):
    t = constant(rng.uniform(-1, 1, size=(1, 3, 4, 4)))
    w = constant(rng.uniform(-1, 1, size=(1, 3, 4, 4)))
    assert np.array_equal(blend(t, w, AttentionMask(constant(np.ones((1, 1, 4, 4))))).data, t.data)
    assert np.array_equal(blend(t, w, AttentionMask(constant(np.zeros((1, 1, 4, 4))))).data, w.data)


def test_blend_midpoint():
    t = constant(np.full((1, 3, 4, 4), -1.0))
    w = constant(np.full((1, 3, 4, 4), 1.0))
    m = AttentionMask(constant(np.full((1, 1, 4, 4), 0.5)))
    assert np.all(blend(t, w, m).data == 0.0)


def test_blend_convexity_property(rng):
    for _ in range(25):
        t = constant(rng.uniform(-1, 1, size=(1, 2, 5, 5)))
        w = constant(rng.uniform(-1, 1, size=(1, 2, 5, 5)))
        m = AttentionMask(constant(rng.uniform(0, 1, size=(1, 1, 5, 5))))
        out = blend(t, w, m).data
        lo = np.minimum(t.data, w.data)
        hi = np.maximum(t.data, w.data)
        assert (out >= lo - 1e-12).all() and (out <= hi + 1e-12).all()


def test_blend_mask_contract():
    t = constant(np.zeros((1, 3, 2, 2)))
    with pytest.raises(ContractError):
        blend(t, t, constant(np.full((1, 1, 2, 2), 1.2)))


def test_compose_residual_cases(rng):
    blended = constant(rng.uniform(-1, 1, size=(1, 3, 4, 4)))
    zero_res = AppearanceResidual(constant(np.zeros((1, 3, 4, 4))), alpha=0.7)
    assert np.array_equal(compose_residual(blended, zero_res).data, blended.data)
    any_res = AppearanceResidual(constant(rng.normal(size=(1, 3, 4, 4))), alpha=0.0)
    assert np.array_equal(compose_residual(blended, any_res).data, blended.data)
    out = compose_residual(constant(np.zeros((1, 3, 4, 4))), AppearanceResidual(constant(np.full((1, 3, 4, 4), 0.4)), 0.5))
    assert np.allclose(out.data, 0.2)


def test_output_clamp_only_for_serialization():
    x = constant(np.array([[[[1.6, -1.4], [0.2, 0.9]]]]))
    clamped = clamp_for_output(x)
    assert clamped.data.max() <= 1.0 and clamped.data.min() >= -1.0
    assert x.data.max() == pytest.approx(1.6)


def test_upscale_scale_one_passthrough(rng):
    f = FlowField(constant(rng.uniform(-1, 1, size=(1, 2, 4, 4))))
    m = AttentionMask(constant(rng.uniform(0, 1, size=(1, 1, 4, 4))))
    r = AppearanceResidual(constant(rng.normal(size=(1, 3, 4, 4))), 1.0)
    f2, m2, r2 = upscale_transfer(f, m, r, 1)
    assert f2 is f and m2 is m and r2 is r


def test_upscale_flow_units():
    f = np.zeros((1, 2, 4, 4))
    f[0, 0] = 3.0
    flow = _flow(f)
    mask = AttentionMask(constant(np.full((1, 1, 4, 4), 0.3)))
    res = AppearanceResidual(constant(np.zeros((1, 3, 4, 4))), 1.0)
    f2, m2, r2 = upscale_transfer(flow, mask, res, 2)
    assert f2.shape == (1, 2, 8, 8) and m2.shape == (1, 1, 8, 8)
    assert np.allclose(f2.data.data[0, 0], 6.0)
    assert np.allclose(f2.data.data[0, 1], 0.0)


def test_upscale_rejects_fractional_resolution():
    f = FlowField.zeros(1, 4, 4)
    m = AttentionMask(constant(np.zeros((1, 1, 4, 4))))
    r = AppearanceResidual(constant(np.zeros((1, 3, 4, 4))), 1.0)
    with pytest.raises(ContractError):
        upscale_transfer(f, m, r, 1.3)
    with pytest.raises(ContractError):
        upscale_transfer(f, m, r, 0.5)


def _smooth_transfer_fields(rng, size, dtype=np.float64):
    """Low-frequency flow/mask/residual, the regime the upscale path targets."""
    yy, xx = np.meshgrid(np.linspace(0, np.pi * 2, size), np.linspace(0, np.pi * 2, size), indexing="ij")
    a, b, c, d = rng.uniform(0.4, 1.4, size=4)
    p, q = rng.uniform(0, np.pi * 2, size=2)
    flow = np.stack(
        [a * np.sin(xx * 0.5 + p) + b * np.cos(yy * 0.5 + q), c * np.sin((xx + yy) * 0.3 + p) * 0.7]
    )[None].astype(dtype)
    mask = (0.5 + 0.45 * np.sin(xx * 0.4 + q) * np.cos(yy * 0.3 + p))[None, None].astype(dtype)
    residual = (0.25 * np.sin(xx * 0.6 + p) * np.sin(yy * 0.5 + q))[None, None].astype(dtype)
    residual = np.repeat(residual, 3, axis=1)
    return flow, mask, residual


def _pipeline(target, source, flow, mask, residual, alpha=1.0):
    warped = warp_bilinear(source, flow)
    mixed = blend(target, warped, mask)
    return compose_residual(mixed, AppearanceResidual(residual, alpha))


def test_apply_transfer_identity_case(rng):
    spec = random_spec(rng, True)
    hi = constant(render_face(spec, 128).image.astype(np.float64)[None])
    lo_flow = FlowField.zeros(1, 64, 64)
    lo_mask = AttentionMask(constant(np.ones((1, 1, 64, 64))))
    lo_res = AppearanceResidual(constant(np.zeros((1, 3, 64, 64))), 1.0)
    out = apply_transfer(hi, hi, lo_flow, lo_mask, lo_res)
    assert np.allclose(out.data, hi.data, atol=1e-12)


def test_apply_transfer_scale_one_equals_lowres(rng):
    size = 32
    spec_t, spec_s = random_spec(rng, False), random_spec(rng, True)
    target = constant(render_face(spec_t, size).image.astype(np.float64)[None])
    source = constant(render_face(spec_s, size).image.astype(np.float64)[None])
    flow_a, mask_a, res_a = _smooth_transfer_fields(rng, size)
    flow = FlowField(constant(flow_a))
    mask = AttentionMask(constant(mask_a))
    res = constant(res_a)
    direct = _pipeline(target, source, flow, mask, res)
    via_apply = apply_transfer(target, source, flow, mask, AppearanceResidual(res, 1.0))
    assert np.array_equal(direct.data, via_apply.data)


def test_apply_transfer_resolution_mismatch(rng):
    t = constant(np.zeros((1, 3, 64, 64)))
    s = constant(np.zeros((1, 3, 128, 128)))
    with pytest.raises(DimensionError):
        apply_transfer(t, s, FlowField.zeros(1, 32, 32), AttentionMask(constant(np.ones((1, 1, 32, 32)))), AppearanceResidual(constant(np.zeros((1, 3, 32, 32))), 1.0))


def test_flow_scaling_covariance_oracle(rng):
    """Downscaled high-res output stays close to the low-res output (20 pairs)."""
    lo, hi = 64, 128
    diffs = []
    for _ in range(20):
        spec_t, spec_s = random_spec(rng, False), random_spec(rng, True)
        t_lo = constant(render_face(spec_t, lo).image.astype(np.float64)[None])
        s_lo = constant(render_face(spec_s, lo).image.astype(np.float64)[None])
        t_hi = constant(render_face(spec_t, hi).image.astype(np.float64)[None])
        s_hi = constant(render_face(spec_s, hi).image.astype(np.float64)[None])
        flow_a, mask_a, res_a = _smooth_transfer_fields(rng, lo)
        flow = FlowField(constant(flow_a))
        mask = AttentionMask(constant(mask_a))
        low_out = _pipeline(t_lo, s_lo, flow, mask, constant(res_a))
        hi_out = apply_transfer(t_hi, s_hi, flow, mask, AppearanceResidual(constant(res_a), 1.0))
        down = resize_raw(hi_out.data, lo, lo)
        diffs.append(np.abs(down - low_out.data).mean())
    assert np.mean(diffs) <= 0.05, f"mean L1 {np.mean(diffs):.4f}"


def test_warp_blend_compose_gradcheck(rng):
    from faceflow.autodiff.ops import sigmoid, tanh

    target = parameter(rng.uniform(-1, 1, size=(1, 3, 8, 8)))
    source = parameter(rng.uniform(-1, 1, size=(1, 3, 8, 8)))
    flow = parameter(rng.uniform(-1.0, 1.0, size=(1, 2, 8, 8)) + 0.3)
    logits = parameter(rng.normal(size=(1, 1, 8, 8)))
    resid = parameter(rng.normal(size=(1, 3, 8, 8)) * 0.3)
    u = constant(rng.normal(size=(1, 3, 8, 8)))

    def forward():
        warped = warp_bilinear(source, FlowField(flow))
        mixed = blend(target, warped, AttentionMask(sigmoid(logits)))
        return (compose_residual(mixed, AppearanceResidual(tanh(resid), 0.6)) * u).mean()

    res = check_gradients(
        "warp_blend_compose",
        forward,
        [("target", target), ("source", source), ("flow", flow), ("logits", logits), ("resid", resid)],
        samples_per_tensor=24,
        rng=rng,
    )
    assert res.max_rel_err <= 1e-4
