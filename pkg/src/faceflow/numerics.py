"""Global numeric mode.

Everything differentiable runs in one of two dtypes: float64 for verification
(finite-difference checks are unreliable in float32) and float32 for training
speed. The mode is process-global; the training entry points switch to
float32, tests and the gradient-check harness stay in float64.
"""

from __future__ import annotations

import contextlib

import numpy as np

_SUPPORTED = (np.float32, np.float64)
_state = {"dtype": np.float64}


def default_dtype() -> type:
    """Current default floating dtype for new tensors."""
    return _state["dtype"]


def set_default_dtype(dtype) -> None:
    dt = np.dtype(dtype).type
    if dt not in _SUPPORTED:
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _state["dtype"] = dt


@contextlib.contextmanager
def using_dtype(dtype):
    """Temporarily switch the default dtype (restores on exit)."""
    previous = _state["dtype"]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = previous
