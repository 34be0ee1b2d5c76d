"""Finite-difference verification of recorded gradients.

Central differences in float64 against the backward pass. Relative error
uses an absolute floor in the denominator so near-zero gradients stay
measurable instead of blowing up the ratio:

    rel = |analytic - numeric| / max(|analytic|, |numeric|, floor)

For large graphs the harness perturbs a seeded random sample of entries per
leaf tensor (``samples_per_tensor``); pass ``None`` to check every entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .tensor import Tensor, backward, no_grad

DEFAULT_EPS = 1e-5
DEFAULT_FLOOR = 1e-3


@dataclass
class LeafResult:
    name: str
    max_rel_err: float
    worst_index: int
    analytic: float
    numeric: float
    checked: int


@dataclass
class CheckResult:
    """One graph's verdict with its per-leaf breakdown."""

    name: str
    leaves: list = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((l.max_rel_err for l in self.leaves), default=0.0)

    @property
    def worst_leaf(self) -> LeafResult | None:
        return max(self.leaves, key=lambda l: l.max_rel_err, default=None)


@dataclass
class GradCheckReport:
    checks: list = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((c.max_rel_err for c in self.checks), default=0.0)

    @property
    def worst_check(self) -> CheckResult | None:
        return max(self.checks, key=lambda c: c.max_rel_err, default=None)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err <= tol

    def format_table(self) -> str:
        lines = [f"{'graph':38s} {'worst leaf':28s} {'rel err':>12s}"]
        for c in sorted(self.checks, key=lambda c: -c.max_rel_err):
            leaf = c.worst_leaf
            leaf_name = leaf.name if leaf else "-"
            lines.append(f"{c.name:38s} {leaf_name:28s} {c.max_rel_err:12.3e}")
        lines.append(f"{'MAX':38s} {'':28s} {self.max_rel_err:12.3e}")
        return "\n".join(lines)


def directional_check(
    forward,
    leaves,
    *,
    trials: int = 50,
    eps: float = DEFAULT_EPS,
    floor: float = DEFAULT_FLOOR,
    rng: np.random.Generator | None = None,
) -> float:
    """Adjointness via random directions: FD of f along d vs <grad, d>.

    One forward+backward gives the gradient; each trial compares the
    finite-difference directional derivative along a random unit direction
    with the inner product of that direction and the recorded gradient.
    Returns the max relative error over trials.
    """
    leaves = list(leaves)
    rng = rng if rng is not None else np.random.default_rng(0)
    for _, t in leaves:
        if t.data.dtype != np.float64:
            raise ContractError("directional check requires float64 leaves")
        t.zero_grad()
    loss = forward()
    backward(loss)
    grads = []
    for name, t in leaves:
        if t.grad is None:
            raise ContractError(f"leaf '{name}' received no gradient")
        grads.append(t.grad.copy())
        t.zero_grad()
    worst = 0.0
    for _ in range(trials):
        dirs = [rng.normal(size=t.data.shape) for _, t in leaves]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        with no_grad():
            for (_, t), d in zip(leaves, dirs):
                t.data = t.data + eps * d
            f_plus = forward().item()
            for (_, t), d in zip(leaves, dirs):
                t.data = t.data - 2 * eps * d
            f_minus = forward().item()
            for (_, t), d in zip(leaves, dirs):
                t.data = t.data + eps * d
        numeric = (f_plus - f_minus) / (2 * eps)
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor))
    return worst


def check_gradients(
    name: str,
    forward,
    leaves,
    *,
    eps: float = DEFAULT_EPS,
    floor: float = DEFAULT_FLOOR,
    samples_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> CheckResult:
    """Compare backward-pass gradients of ``forward()`` against central differences.

    ``forward`` must be a zero-argument callable returning a scalar Tensor and
    must be re-runnable (it is re-evaluated twice per perturbed entry).
    ``leaves`` is a list of (name, Tensor) pairs to differentiate with respect
    to; all must be float64 leaves.
    """
    leaves = list(leaves)
    for leaf_name, t in leaves:
        if t.data.dtype != np.float64:
            raise ContractError(f"grad check requires float64 mode; leaf '{leaf_name}' is {t.data.dtype}")
        t.zero_grad()
    loss = forward()
    backward(loss)
    analytic = {}
    for leaf_name, t in leaves:
        if t.grad is None:
            raise ContractError(f"leaf '{leaf_name}' received no gradient from the graph")
        analytic[leaf_name] = t.grad.copy()
        t.zero_grad()

    rng = rng if rng is not None else np.random.default_rng(0)
    result = CheckResult(name=name)
    for leaf_name, t in leaves:
        flat = t.data.reshape(-1)
        n = flat.size
        if samples_per_tensor is None or samples_per_tensor >= n:
            indices = np.arange(n)
        else:
            indices = rng.choice(n, size=samples_per_tensor, replace=False)
        an_flat = analytic[leaf_name].reshape(-1)
        worst = LeafResult(leaf_name, 0.0, -1, 0.0, 0.0, len(indices))
        for idx in indices:
            original = flat[idx]
            with no_grad():
                flat[idx] = original + eps
                f_plus = forward().item()
                flat[idx] = original - eps
                f_minus = forward().item()
            flat[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(an_flat[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if rel >= worst.max_rel_err:
                worst = LeafResult(leaf_name, rel, int(idx), a, numeric, len(indices))
        result.leaves.append(worst)
    return result
