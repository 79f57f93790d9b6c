"""Motion libraries: tagged rig parameter frames sampled during optimization."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, ParameterError
from ..geometry import quat_from_axis_angle, quat_multiply
from ..rig.model import BlendshapeRig, RigParams

MOUTH_OPEN_DEG = 8.0


@dataclass
class MotionFrame:
    params: RigParams
    mouth_open: bool = False
    source: str = ""


@dataclass
class MotionLibrary:
    frames: list[MotionFrame]

    def __len__(self) -> int:
        return len(self.frames)

    def validate(self, rig: BlendshapeRig | None = None) -> "MotionLibrary":
        if not self.frames:
            raise ParameterError("motion library is empty")
        if rig is not None:
            for i, fr in enumerate(self.frames):
                try:
                    fr.params.validate(rig)
                except ParameterError as exc:
                    raise ParameterError(f"motion frame {i}: {exc}") from exc
        return self

    def mouth_open_indices(self) -> np.ndarray:
        return np.array([i for i, f in enumerate(self.frames) if f.mouth_open], dtype=np.int64)

    def sample(self, rng: np.random.Generator, mouth_open_only: bool = False) -> MotionFrame:
        if mouth_open_only:
            idx = self.mouth_open_indices()
            if len(idx) == 0:
                raise ParameterError("motion library has no open-mouth frames")
            return self.frames[int(idx[rng.integers(len(idx))])]
        self.validate()
        return self.frames[int(rng.integers(len(self.frames)))]

    def dumps(self) -> str:
        lines = [json.dumps({"params": f.params.to_json(), "mouth_open": bool(f.mouth_open), "source": f.source},
                            sort_keys=True) for f in self.frames]
        return "".join(line + "\n" for line in lines)

    @classmethod
    def loads(cls, text: str) -> "MotionLibrary":
        frames = []
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                frames.append(MotionFrame(RigParams.from_json(d["params"]), bool(d.get("mouth_open", False)),
                                          str(d.get("source", ""))))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"bad motion frame on line {n}: {exc}", field=f"line {n}") from exc
        return cls(frames).validate()


def toy_motion_library(rig: BlendshapeRig, count: int = 24, seed: int = 0) -> MotionLibrary:
    """Random expressions, head turns and jaw openings; every other frame has the mouth open."""
    if count < 1:
        raise ParameterError("count must be >= 1")
    rng = np.random.default_rng(seed)
    neutral = RigParams.neutral(rig)
    head = rig.joint_index("head") if "head" in rig.joint_names else None
    frames = []
    for i in range(count):
        open_ = i % 2 == 1
        jaw_deg = rng.uniform(12.0, 25.0) if open_ else rng.uniform(0.0, 4.0)
        joints = neutral.joint_rotations.copy()
        if head is not None:
            yaw = quat_from_axis_angle([0.0, 1.0, 0.0], np.radians(rng.uniform(-20, 20)))
            pitch = quat_from_axis_angle([1.0, 0.0, 0.0], np.radians(rng.uniform(-10, 10)))
            joints[head] = quat_multiply(yaw, pitch)
        params = neutral.copy(
            expression=rng.uniform(-0.5, 0.5, rig.n_expression),
            joint_rotations=joints,
            jaw=quat_from_axis_angle([1.0, 0.0, 0.0], np.radians(jaw_deg)),
            eyelids=rng.uniform(0.0, 0.3, 2),
        )
        frames.append(MotionFrame(params, jaw_deg >= MOUTH_OPEN_DEG, f"toy:{i}"))
    return MotionLibrary(frames).validate(rig)
