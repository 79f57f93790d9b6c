"""Face-bound Gaussian clouds: storage, binding frames, globalization, regularizers.

Each splat lives in the frame of one mesh triangle. Its local position is in
units of the triangle's scale (mean edge length), so when the driving mesh
moves, stretches or rotates, the splat follows.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from ..errors import ParameterError
from ..geometry import matrix_to_quat, quat_multiply, quat_normalize

PARAM_NAMES = ("local_position", "local_rotation", "log_scale", "opacity_logit", "color")

TEETH_COLOR = np.array([141.6, 133.8, 122.4]) / 255.0
MOUTH_INTERIOR_COLOR = np.array([64.0, 30.5, 29.5]) / 255.0


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class GaussianCloud:
    local_position: np.ndarray  # [N, 3], face-scale units in the binding frame
    local_rotation: np.ndarray  # [N, 4] unit quaternions (w, x, y, z)
    log_scale: np.ndarray  # [N, 3]
    opacity_logit: np.ndarray  # [N]
    color: np.ndarray  # [N, 3] in [0, 1]
    binding: np.ndarray  # [N] face index

    def __post_init__(self):
        self.local_position = np.asarray(self.local_position, dtype=np.float64).reshape(-1, 3)
        self.local_rotation = np.asarray(self.local_rotation, dtype=np.float64).reshape(-1, 4)
        self.log_scale = np.asarray(self.log_scale, dtype=np.float64).reshape(-1, 3)
        self.opacity_logit = np.asarray(self.opacity_logit, dtype=np.float64).reshape(-1)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(-1, 3)
        self.binding = np.asarray(self.binding, dtype=np.int64).reshape(-1)
        n = len(self.binding)
        for f in fields(self):
            if len(getattr(self, f.name)) != n:
                raise ParameterError(f"{f.name} has {len(getattr(self, f.name))} rows, expected {n}")

    @property
    def count(self) -> int:
        return len(self.binding)

    @classmethod
    def empty(cls) -> "GaussianCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)),
                   np.zeros(0, dtype=np.int64))

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(*(getattr(self, f.name).copy() for f in fields(self)))

    def subset(self, mask_or_index) -> "GaussianCloud":
        return GaussianCloud(*(getattr(self, f.name)[mask_or_index] for f in fields(self)))

    def params(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name (views, not copies)."""
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for name, value in params.items():
            setattr(self, name, value)

    @property
    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logit)

    def renormalize(self) -> None:
        self.local_rotation = quat_normalize(self.local_rotation)

    def validate(self, n_faces: int | None = None) -> "GaussianCloud":
        for name in PARAM_NAMES:
            a = getattr(self, name)
            bad = ~np.isfinite(a).reshape(a.shape[0], -1).all(axis=1) if a.size else np.zeros(0, dtype=bool)
            if np.any(bad):
                raise ParameterError(f"splat {int(np.flatnonzero(bad)[0])} has non-finite {name}")
        if self.count and np.any(np.abs(np.linalg.norm(self.local_rotation, axis=1) - 1.0) > 1e-6):
            raise ParameterError("local rotations must be unit quaternions")
        if n_faces is not None and self.count and (self.binding.min() < 0 or self.binding.max() >= n_faces):
            raise ParameterError(f"binding index out of range for {n_faces} faces")
        return self


@dataclass
class FaceFrames:
    rotation: np.ndarray  # [F, 3, 3], columns (tangent, bitangent, normal)
    centroid: np.ndarray  # [F, 3]
    scale: np.ndarray  # [F]

    @property
    def quaternion(self) -> np.ndarray:
        return matrix_to_quat(self.rotation)

    def __len__(self) -> int:
        return len(self.scale)


def compute_face_frames(vertices: np.ndarray, faces: np.ndarray, eps: float = 1e-12) -> FaceFrames:
    """Per-face orthonormal frame from the first edge and the face normal."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    v0, v1, v2 = (vertices[faces[:, k]] for k in range(3))
    e1, e2 = v1 - v0, v2 - v0
    c = np.cross(e1, e2)
    e1_len = np.linalg.norm(e1, axis=1)
    c_len = np.linalg.norm(c, axis=1)
    bad = (c_len <= eps) | (e1_len <= eps)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ParameterError(f"degenerate face {i}: cannot build a binding frame")
    t = e1 / e1_len[:, None]
    n = c / c_len[:, None]
    b = np.cross(n, t)
    rot = np.stack([t, b, n], axis=2)
    scale = (e1_len + np.linalg.norm(v2 - v1, axis=1) + np.linalg.norm(e2, axis=1)) / 3.0
    return FaceFrames(rot, (v0 + v1 + v2) / 3.0, scale)


@dataclass
class WorldSplats:
    """Splats in world space. Rotations need not be unit (the rasterizer normalizes)."""

    position: np.ndarray  # [N, 3]
    rotation: np.ndarray  # [N, 4]
    log_scale: np.ndarray  # [N, 3]
    opacity_logit: np.ndarray  # [N]
    color: np.ndarray  # [N, 3]

    @property
    def count(self) -> int:
        return len(self.position)

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> np.ndarray:
        return sigmoid(self.opacity_logit)

    @classmethod
    def empty(cls) -> "WorldSplats":
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)))

    @classmethod
    def concatenate(cls, parts) -> "WorldSplats":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f.name) for p in parts]) for f in fields(cls)))

    def validate(self) -> "WorldSplats":
        for f in fields(self):
            a = getattr(self, f.name)
            bad = ~np.isfinite(a).reshape(a.shape[0], -1).all(axis=1) if a.size else np.zeros(0, dtype=bool)
            if np.any(bad):
                raise ParameterError(f"splat {int(np.flatnonzero(bad)[0])} has non-finite {f.name}")
        return self


def _check_frames(cloud: GaussianCloud, frames: FaceFrames) -> None:
    if cloud.count and (cloud.binding.min() < 0 or cloud.binding.max() >= len(frames)):
        bad = int(np.flatnonzero((cloud.binding < 0) | (cloud.binding >= len(frames)))[0])
        raise ParameterError(f"splat {bad} is bound to face {int(cloud.binding[bad])}, "
                             f"but only {len(frames)} frames were given")


def globalize(cloud: GaussianCloud, frames: FaceFrames) -> WorldSplats:
    _check_frames(cloud, frames)
    b = cloud.binding
    rot = frames.rotation[b]
    s = frames.scale[b]
    position = np.einsum("nij,nj->ni", rot, cloud.local_position * s[:, None]) + frames.centroid[b]
    rotation = quat_multiply(frames.quaternion[b], cloud.local_rotation)
    log_scale = cloud.log_scale + np.log(s)[:, None]
    return WorldSplats(position, rotation, log_scale, cloud.opacity_logit.copy(), cloud.color.copy())


def _left_mult_matrix(q: np.ndarray) -> np.ndarray:
    """[N, 4, 4] matrices L with quat_multiply(q, p) = L @ p."""
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([
        np.stack([w, -x, -y, -z], -1),
        np.stack([x, w, -z, y], -1),
        np.stack([y, z, w, -x], -1),
        np.stack([z, -y, x, w], -1),
    ], -2)


def globalize_backward(cloud: GaussianCloud, frames: FaceFrames, grads: WorldSplats) -> dict[str, np.ndarray]:
    """Chain world-space splat gradients back to the cloud's trainable arrays."""
    b = cloud.binding
    rot = frames.rotation[b]
    s = frames.scale[b]
    g_pos = np.einsum("nji,nj->ni", rot, grads.position) * s[:, None]
    g_rot = np.einsum("nji,nj->ni", _left_mult_matrix(frames.quaternion[b]), grads.rotation)
    return {"local_position": g_pos, "local_rotation": g_rot, "log_scale": grads.log_scale.copy(),
            "opacity_logit": grads.opacity_logit.copy(), "color": grads.color.copy()}


def reg_scale(cloud: GaussianCloud, threshold: float = 0.2, weight: float = 1e4):
    """weight * mean over all N*3 axes of max(0, exp(log_scale) - threshold); returns (loss, grad)."""
    g = np.zeros_like(cloud.log_scale)
    if cloud.count == 0 or weight == 0:
        return 0.0, g
    s = np.exp(cloud.log_scale)
    over = s > threshold
    loss = weight * float(np.mean(np.where(over, s - threshold, 0.0)))
    g[over] = weight * s[over] / s.size
    return loss, g


def reg_position(cloud: GaussianCloud, threshold: float = 1.0, weight: float = 1e-2):
    """weight * mean over splats of max(0, |local_position| - threshold); returns (loss, grad)."""
    g = np.zeros_like(cloud.local_position)
    if cloud.count == 0 or weight == 0:
        return 0.0, g
    r = np.linalg.norm(cloud.local_position, axis=1)
    over = r > threshold
    loss = weight * float(np.mean(np.where(over, r - threshold, 0.0)))
    g[over] = weight * cloud.local_position[over] / (r[over, None] * cloud.count)
    return loss, g


def prune(cloud: GaussianCloud, opacity_floor: float) -> GaussianCloud:
    """Drop splats whose activated opacity is below ``opacity_floor``."""
    return cloud.subset(cloud.opacity >= opacity_floor)


def init_teeth_colors(cloud: GaussianCloud, face_partition: np.ndarray, partition_names) -> GaussianCloud:
    """Color teeth splats ivory and mouth-interior splats dark red; others are untouched."""
    names = list(partition_names)
    part = np.asarray(face_partition)[cloud.binding]
    teeth = np.isin(part, [names.index("teeth_upper"), names.index("teeth_lower")])
    mouth = part == names.index("mouth_interior") if "mouth_interior" in names else np.zeros_like(teeth)
    if not np.any(teeth | mouth):
        raise ParameterError("no splats are bound to teeth or mouth-interior faces")
    out = cloud.copy()
    out.color[teeth] = TEETH_COLOR
    out.color[mouth] = MOUTH_INTERIOR_COLOR
    return out
