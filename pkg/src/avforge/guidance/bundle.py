"""The guidance backend as seen by the optimization stages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ddim import CFG_SCALE, DELTA_T, ControlMaps, ism_gradient, sdedit
from .oracles import ControlAdapter, GuidanceOracle, LatentCodec


@dataclass
class Guidance:
    oracle: GuidanceOracle
    codec: LatentCodec
    adapter: ControlAdapter | None = None
    text: str | None = "a portrait of a person"
    cfg_scale: float = CFG_SCALE
    delta_t: int = DELTA_T
    omega: float = 1.0
    ism_mode: str = "literal"
    sdedit_step: int = DELTA_T

    def control(self, normal, segmentation) -> ControlMaps | None:
        if self.adapter is None or normal is None:
            return None
        return ControlMaps(self.adapter, normal, segmentation)

    def edit(self, image: np.ndarray, strength: float, seed: int, normal=None, segmentation=None,
             cfg_scale: float | None = None) -> np.ndarray:
        """SDEdit the image; conditioning maps are used when given and an adapter is configured."""
        return sdedit(self.oracle, self.codec, image, self.text, strength, seed,
                      self.control(normal, segmentation), self.cfg_scale if cfg_scale is None else cfg_scale,
                      self.sdedit_step)

    def ism(self, image: np.ndarray, t: int, normal=None, segmentation=None) -> np.ndarray:
        """Image-space guidance gradient; the interval shrinks to t - 1 near the end of the schedule."""
        delta = min(self.delta_t, t - 1)
        return ism_gradient(image, self.oracle, self.codec, t, self.text, delta,
                            self.control(normal, segmentation), self.omega, self.ism_mode)
