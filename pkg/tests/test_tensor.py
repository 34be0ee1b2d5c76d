import numpy as np
import pytest

from faceflow.autodiff import (
    Tensor,
    backward,
    build_tape,
    constant,
    leaky_relu,
    no_grad,
    parameter,
    sigmoid,
    tanh,
)
from faceflow.errors import ContractError, DimensionError


def test_rank4_enforced():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((3, 4)))


def test_grad_shape_matches_values():
    x = parameter(np.ones((2, 1, 3, 3)))
    backward((x * x).mean())
    assert x.grad.shape == x.data.shape


def test_sum_grad_is_ones():
    x = parameter([[[[1.0, 2.0], [3.0, 4.0]]]])
    backward(x.sum())
    assert np.array_equal(x.grad, np.ones((1, 1, 2, 2)))


def test_square_grad_analytic():
    x = parameter([[[[1.0, 2.0], [3.0, 4.0]]]])
    backward((x * x).sum())
    assert np.array_equal(x.grad, np.array([[[[2.0, 4.0], [6.0, 8.0]]]]))


def test_repeated_backward_accumulates():
    x = parameter([[[[1.0, 2.0], [3.0, 4.0]]]])
    loss = lambda: (x * x).sum()
    backward(loss())
    first = x.grad.copy()
    backward(loss())
    assert np.array_equal(x.grad, 2 * first)
    x.zero_grad()
    assert x.grad is None


def test_backward_rejects_nonscalar():
    x = parameter(np.ones((1, 1, 2, 2)))
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_tape_topological_and_single_visit():
    x = parameter(np.ones((1, 1, 2, 2)))
    y = x * 2.0 + x
    z = (y * y).mean()
    tape = build_tape(z)
    assert tape.check_topological()
    walked = backward(z)
    assert walked.visits == len(walked.nodes)


def test_tape_rebuilt_per_backward():
    x = parameter(np.ones((1, 1, 2, 2)))
    t1 = backward((x * 3.0).mean())
    t2 = backward((x * 3.0).mean())
    assert t1 is not t2


def test_no_grad_suppresses_recording():
    x = parameter(np.ones((1, 1, 2, 2)))
    with no_grad():
        y = x * 2.0
    assert y.node is None


def test_detach_cuts_history():
    x = parameter(np.ones((1, 1, 2, 2)))
    y = (x * 2.0).detach()
    assert y.node is None and not y.requires_grad
    backward((y * 1.0).mean() + (x * 0.0).mean())
    assert np.array_equal(x.grad, np.zeros_like(x.data))


def test_shared_subexpression_fanout():
    x = parameter(np.full((1, 1, 1, 1), 3.0))
    y = x * 2.0
    z = (y + y).sum()  # dz/dx = 4
    backward(z)
    assert x.grad.item() == 4.0


def test_finite_outputs_on_finite_inputs(rng):
    x = constant(rng.normal(size=(2, 3, 6, 6)) * 50)
    for fn in (tanh, sigmoid, lambda t: leaky_relu(t, 0.2)):
        out = fn(x)
        assert np.isfinite(out.data).all()


def test_broadcast_bias_grad(rng):
    x = parameter(rng.normal(size=(2, 3, 4, 4)))
    b = parameter(rng.normal(size=(1, 3, 1, 1)))
    backward((x + b).sum())
    assert b.grad.shape == (1, 3, 1, 1)
    assert np.allclose(b.grad, 32.0)
