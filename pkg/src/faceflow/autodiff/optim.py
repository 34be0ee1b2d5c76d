"""Bias-corrected Adam over named parameter lists."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .tensor import Tensor


class Adam:
    """Holds first/second moments per parameter plus a shared step counter.

    ``params`` is a list of (name, Tensor) pairs; names key the moment tables
    and checkpoint entries, so they must be unique.
    """

    def __init__(self, params, lr: float = 0.002, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        names = [n for n, _ in self.params]
        if len(set(names)) != len(names):
            raise ContractError("duplicate parameter names in optimizer")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def clip_gradients(self, max_norm: float) -> float:
        """Scale all gradients so their global L2 norm is at most ``max_norm``."""
        total = 0.0
        for name, p in self.params:
            if p.grad is None:
                raise ContractError(f"gradient clip: parameter '{name}' has no gradient")
            total += float((p.grad.astype(np.float64) ** 2).sum())
        norm = float(np.sqrt(total))
        if norm > max_norm and norm > 0:
            scale = np.array(max_norm / norm, dtype=self.params[0][1].data.dtype) if self.params else 1.0
            for _, p in self.params:
                p.grad *= scale
        return norm

    def step(self) -> None:
        """One update; every parameter must carry a gradient."""
        for name, p in self.params:
            if p.grad is None:
                raise ContractError(f"adam step: parameter '{name}' has no gradient")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params:
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data = p.data - (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        """Moment arrays under stable names, for checkpointing."""
        out = {}
        for name in self.m:
            out[f"{name}.m"] = self.m[name]
            out[f"{name}.v"] = self.v[name]
        return out

    def load_state_arrays(self, arrays, t: int) -> None:
        for name, p in self.params:
            for table, suffix in ((self.m, ".m"), (self.v, ".v")):
                key = name + suffix
                if key not in arrays:
                    raise ContractError(f"optimizer state missing entry '{key}'")
                if arrays[key].shape != p.data.shape:
                    raise ContractError(f"optimizer entry '{key}' shape {arrays[key].shape} != {p.data.shape}")
                table[name] = arrays[key].astype(p.data.dtype, copy=True)
        self.t = int(t)
