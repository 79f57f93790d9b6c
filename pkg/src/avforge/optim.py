"""Adam over named numpy parameter arrays, with per-group learning rates."""

from __future__ import annotations

from typing import Mapping

import numpy as np


class Adam:
    def __init__(self, lrs: Mapping[str, float] | float, betas=(0.9, 0.999), eps: float = 1e-15):
        self.lrs = lrs
        self.b1, self.b2 = betas
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def lr(self, name: str) -> float:
        return float(self.lrs if not isinstance(self.lrs, Mapping) else self.lrs.get(name, 0.0))

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        """Update ``params`` in place from ``grads``; names without a gradient are left alone."""
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, g in grads.items():
            lr = self.lr(name)
            if lr == 0.0:
                continue
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}
