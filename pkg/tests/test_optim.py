import numpy as np
import pytest

from faceflow.autodiff import Adam, backward, parameter
from faceflow.errors import ContractError


def test_first_step_magnitude():
    w = parameter(np.ones((1, 1, 1, 1)))
    opt = Adam([("w", w)], lr=0.002)
    w.grad = np.ones_like(w.data)
    opt.step()
    assert w.data.item() == pytest.approx(0.998, abs=1e-6)
    assert opt.t == 1


def test_zero_grad_fresh_state_leaves_param():
    w = parameter(np.full((1, 1, 1, 1), 1.5))
    opt = Adam([("w", w)], lr=0.01)
    w.grad = np.zeros_like(w.data)
    opt.step()
    assert w.data.item() == 1.5
    assert opt.t == 1


def test_missing_grad_names_parameter():
    w = parameter(np.ones((1, 1, 1, 1)))
    v = parameter(np.ones((1, 1, 1, 1)))
    opt = Adam([("alpha", w), ("beta", v)], lr=0.01)
    w.grad = np.ones_like(w.data)
    with pytest.raises(ContractError, match="beta"):
        opt.step()


def test_quadratic_strictly_decreases():
    w = parameter(np.ones((1, 1, 1, 1)))
    opt = Adam([("w", w)], lr=0.002)
    values = []
    for _ in range(100):
        opt.zero_grad()
        backward((w * w).sum())
        opt.step()
        values.append(w.data.item() ** 2)
    assert all(b < a for a, b in zip([1.0] + values, values))


def test_t_strictly_increments():
    w = parameter(np.ones((1, 1, 1, 1)))
    opt = Adam([("w", w)], lr=0.01)
    for expected in range(1, 5):
        w.grad = np.ones_like(w.data)
        opt.step()
        assert opt.t == expected


def test_state_roundtrip():
    w = parameter(np.ones((1, 1, 2, 2)))
    opt = Adam([("w", w)], lr=0.01, beta1=0.5)
    for _ in range(3):
        w.grad = np.full_like(w.data, 0.3)
        opt.step()
    arrays = {k: v.copy() for k, v in opt.state_arrays().items()}
    opt2 = Adam([("w", parameter(np.ones((1, 1, 2, 2))))], lr=0.01, beta1=0.5)
    opt2.load_state_arrays(arrays, opt.t)
    assert opt2.t == 3
    assert np.array_equal(opt2.m["w"], opt.m["w"])
    assert np.array_equal(opt2.v["w"], opt.v["w"])
