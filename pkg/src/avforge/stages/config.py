"""Stage hyperparameters, with the full-scale defaults and the desk-scale (1/10 iterations) variants."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

from ..errors import ParameterError

STAGE_NAMES = ("init", "eye", "mouth", "full", "refine")

# Position learning rate is multiplied by the scene extent in face-scale units.
DEFAULT_LRS = {
    "local_position": 1.6e-4,
    "color": 2.5e-3,
    "opacity_logit": 5e-2,
    "log_scale": 5e-3,
    "local_rotation": 1e-3,
}


@dataclass
class StageConfig:
    name: str
    iterations: int
    t_start: int = 0
    t_end: int = 0
    lrs: dict = field(default_factory=lambda: dict(DEFAULT_LRS))
    scale_reg_weight: float = 1e4
    scale_reg_threshold: float = 0.2
    position_reg_weight: float = 1e-2
    position_reg_threshold: float = 1.0
    strength: float | None = None
    regions: tuple = ()
    seed: int = 0
    resolution: int = 64
    cfg_scale: float = 7.5
    regularize: bool = True
    camera_radius: float = 3.2
    yaw_range: tuple = (-180.0, 180.0)
    pitch_range: tuple = (-20.0, 30.0)
    gaze_range: float = 25.0
    perceptual_weight: float = 1.0
    log_every: int = 1

    def __post_init__(self):
        self.regions = tuple(self.regions)
        self.yaw_range = tuple(self.yaw_range)
        self.pitch_range = tuple(self.pitch_range)
        self.validate()

    def validate(self) -> "StageConfig":
        if self.name not in STAGE_NAMES:
            raise ParameterError(f"unknown stage {self.name!r}; expected one of {STAGE_NAMES}")
        if self.iterations < 1:
            raise ParameterError("iterations must be >= 1")
        if self.t_start < self.t_end:
            raise ParameterError(f"t_start ({self.t_start}) must be >= t_end ({self.t_end})")
        weights = [self.scale_reg_weight, self.scale_reg_threshold, self.position_reg_weight,
                   self.position_reg_threshold, self.cfg_scale, self.camera_radius, self.perceptual_weight,
                   *self.lrs.values()]
        if not all(math.isfinite(w) for w in weights):
            raise ParameterError("stage weights must be finite")
        if self.strength is not None and not 0.0 <= self.strength <= 1.0:
            raise ParameterError("strength must be in [0, 1]")
        if self.resolution < 1:
            raise ParameterError("resolution must be positive")
        return self

    def timestep(self, iteration: int) -> int:
        """Linearly decreasing noise level from t_start (first iteration) to t_end (last)."""
        if self.iterations == 1:
            return self.t_start
        f = iteration / (self.iterations - 1)
        return int(round(self.t_start + (self.t_end - self.t_start) * f))

    def scaled(self, divisor: int = 10, **changes) -> "StageConfig":
        return replace(self, iterations=max(1, self.iterations // divisor), **changes)

    def to_json(self) -> dict:
        d = asdict(self)
        for k in ("regions", "yaw_range", "pitch_range"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_json(cls, d: dict) -> "StageConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown stage config keys: {sorted(unknown)}")
        d = dict(d)
        if "lrs" in d:
            d["lrs"] = dict(DEFAULT_LRS, **d["lrs"])
        return cls(**d)

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "StageConfig":
        with open(path) as f:
            return cls.from_json(json.load(f))


def full_scale_configs(seed: int = 0) -> dict[str, StageConfig]:
    pretrain_view = dict(yaw_range=(-15.0, 15.0), pitch_range=(-10.0, 10.0))
    return {
        "init": StageConfig("init", 3000, position_reg_weight=1e5, regions=("full",), seed=seed),
        "eye": StageConfig("eye", 500, strength=0.9, regions=("eye",), seed=seed, **pretrain_view),
        "mouth": StageConfig("mouth", 500, t_start=750, t_end=15, regions=("mouth",), seed=seed, **pretrain_view),
        "full": StageConfig("full", 1000, t_start=300, t_end=15, regions=("eye", "mouth", "face", "full"), seed=seed),
        "refine": StageConfig("refine", 750, strength=0.3, regions=("eye", "mouth", "face", "full"), seed=seed),
    }


def desk_configs(seed: int = 0, divisor: int = 10) -> dict[str, StageConfig]:
    """Iterations divided by ``divisor``; classifier-free guidance off (analytic oracles)."""
    return {k: c.scaled(divisor, cfg_scale=1.0) for k, c in full_scale_configs(seed).items()}
