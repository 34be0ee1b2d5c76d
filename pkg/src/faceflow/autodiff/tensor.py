"""Reverse-mode automatic differentiation over dense rank-4 arrays.

A :class:`Tensor` wraps a ``(batch, channel, height, width)`` numpy array.
Operations record a :class:`Node` on the output when gradient tracking is
enabled; :func:`backward` linearizes the reachable nodes into a fresh
:class:`Tape` (define-by-run, rebuilt per call) and walks it once in reverse.

Leaf tensors created with ``requires_grad=True`` accumulate into ``.grad``
across backward calls until :meth:`Tensor.zero_grad` resets them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError, DimensionError
from ..numerics import default_dtype

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording inside its body."""

    def __enter__(self):
        global _grad_enabled
        self._previous = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._previous
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Node:
    """One recorded operation: parents, per-parent gradient rules, output."""

    __slots__ = ("name", "parents", "grad_fns", "out")

    def __init__(self, name, parents, grad_fns, out):
        self.name = name
        self.parents = parents
        self.grad_fns = grad_fns
        self.out = out


@dataclass
class Tape:
    """Topologically ordered record of the nodes reachable from one output."""

    nodes: list = field(default_factory=list)
    visits: int = 0

    def check_topological(self) -> bool:
        position = {id(n): i for i, n in enumerate(self.nodes)}
        for i, node in enumerate(self.nodes):
            for parent in node.parents:
                if parent.node is not None and position.get(id(parent.node), -1) >= i:
                    return False
        return True


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else default_dtype())
        if arr.ndim != 4:
            raise DimensionError(
                f"tensors are rank-4 (batch, channel, height, width); got shape {arr.shape}"
            )
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node: Optional[Node] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same values, no history: drops out of the recorded graph."""
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, grad={'set' if self.grad is not None else 'none'})"

    # Arithmetic operators are attached by faceflow.autodiff.ops at import.


def needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t.node is not None


def apply_op(
    name: str,
    parents: Sequence[Tensor],
    out_data: np.ndarray,
    grad_fns: Sequence[Optional[Callable[[np.ndarray], np.ndarray]]],
) -> Tensor:
    """Wrap an op result, recording a graph node when tracking is active.

    ``grad_fns[i]`` maps the output gradient to parent ``i``'s gradient; it may
    return the incoming array itself (the accumulator copies in that case) or
    any array it does not reuse afterwards.
    """
    out = Tensor(out_data, dtype=out_data.dtype)
    if _grad_enabled and any(needs_grad(p) for p in parents):
        out.node = Node(name, tuple(parents), tuple(grad_fns), out)
    return out


def build_tape(root: Tensor) -> Tape:
    """Linearize the nodes reachable from ``root`` in topological order."""
    tape = Tape()
    if root.node is None:
        return tape
    seen = set()
    stack = [(root.node, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            tape.nodes.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.node is not None and id(parent.node) not in seen:
                stack.append((parent.node, False))
    return tape


def backward(loss: Tensor) -> Tape:
    """Populate gradients of every tracked leaf that ``loss`` depends on.

    ``loss`` must be scalar-shaped (1,1,1,1). Intermediate gradients live in a
    per-call buffer; leaf gradients accumulate into ``.grad`` so repeated
    calls without ``zero_grad`` add up. Returns the tape that was walked.
    """
    if loss.shape != (1, 1, 1, 1):
        raise ContractError(f"backward() needs a scalar loss of shape (1,1,1,1), got {loss.shape}")
    tape = build_tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1, 1, 1), dtype=loss.data.dtype)}
    if loss.node is None:
        if loss.requires_grad:
            _accumulate_leaf(loss, grads[id(loss)])
        return tape
    for node in reversed(tape.nodes):
        tape.visits += 1
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for parent, fn in zip(node.parents, node.grad_fns):
            if fn is None or not needs_grad(parent):
                continue
            pg = fn(g)
            if parent.node is None:
                _accumulate_leaf(parent, pg, alias=pg is g)
            else:
                key = id(parent)
                if key in grads:
                    grads[key] += pg
                else:
                    grads[key] = pg.copy() if pg is g else pg
    return tape


def _accumulate_leaf(t: Tensor, g: np.ndarray, alias: bool = False) -> None:
    if t.grad is None:
        g = np.asarray(g)
        t.grad = g.copy() if (alias or not g.flags.writeable) else g
    else:
        t.grad += g


def parameter(data, dtype=None) -> Tensor:
    """Leaf tensor that collects gradients."""
    return Tensor(data, requires_grad=True, dtype=dtype)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, dtype=dtype)


def zero_grads(params) -> None:
    """Reset gradients on an iterable of (name, Tensor) pairs or Tensors."""
    for p in params:
        tensor = p[1] if isinstance(p, tuple) else p
        tensor.zero_grad()
