"""Diffusion noise schedule (cumulative signal coefficients alpha_bar_t)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError


@dataclass(frozen=True)
class NoiseSchedule:
    alphas_cumprod: np.ndarray  # [T]

    @classmethod
    def linear(cls, T: int = 1000, beta_start: float = 8.5e-4, beta_end: float = 1.2e-2) -> "NoiseSchedule":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
        return cls(np.cumprod(1.0 - betas))

    def __post_init__(self):
        a = np.asarray(self.alphas_cumprod, dtype=np.float64)
        if a.ndim != 1 or len(a) < 2:
            raise ParameterError("schedule needs at least two timesteps")
        if not (a[0] <= 1.0 and a[-1] > 0.0 and np.all(np.diff(a) < 0)):
            raise ParameterError("alpha_bar must decrease strictly from <= 1 to > 0")
        object.__setattr__(self, "alphas_cumprod", a)

    @property
    def T(self) -> int:
        return len(self.alphas_cumprod)

    def alpha_bar(self, t: int) -> float:
        """alpha_bar_t; t = -1 denotes the clean end of the chain (alpha_bar = 1)."""
        if t == -1:
            return 1.0
        if not 0 <= t < self.T:
            raise ParameterError(f"timestep {t} outside [0, {self.T})")
        return float(self.alphas_cumprod[t])

    def to_json(self) -> dict:
        return {"alphas_cumprod": self.alphas_cumprod.tolist()}
