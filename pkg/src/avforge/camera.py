"""Pinhole camera.

Camera space follows the OpenGL convention: x right, y up, the camera looks
down -z. A surface facing the camera has camera-space normal (0, 0, +1).
Pixel (row i, column j) has its center at image coordinates (j + 0.5, i + 0.5):

    u = cx + fx * x / -z
    v = cy - fy * y / -z
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray = field(default_factory=lambda: np.eye(4))
    near: float = 1e-3

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64).reshape(4, 4)

    def validate(self) -> "Camera":
        vals = np.array([self.fx, self.fy, self.cx, self.cy], dtype=np.float64)
        if not np.all(np.isfinite(vals)) or self.fx <= 0 or self.fy <= 0:
            raise ParameterError(f"degenerate camera intrinsics fx={self.fx} fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ParameterError(f"invalid camera resolution {self.width}x{self.height}")
        m = self.world_to_camera
        if not np.all(np.isfinite(m)):
            raise ParameterError("non-finite camera pose")
        r = m[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or not np.allclose(m[3], [0, 0, 0, 1]):
            raise ParameterError("camera pose is not a rigid transform")
        return self

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera position in world space."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def project_camera(self, pc: np.ndarray) -> np.ndarray:
        """Camera-space points [N, 3] -> image coords [N, 2] (no culling)."""
        depth = -pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.cx + self.fx * pc[:, 0] / depth
            v = self.cy - self.fy * pc[:, 1] / depth
        return np.stack([u, v], axis=1)

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points -> (image coords [N, 2], depth [N]); depth > 0 in front."""
        pc = self.to_camera(points)
        return self.project_camera(pc), -pc[:, 2]

    def with_resolution(self, width: int, height: int) -> "Camera":
        sx, sy = width / self.width, height / self.height
        return Camera(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height,
                      self.world_to_camera.copy(), self.near)

    def transformed(self, rigid: np.ndarray) -> "Camera":
        """The camera that sees ``rigid``-transformed world exactly as this one sees the original."""
        w2c = self.world_to_camera @ np.linalg.inv(rigid)
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, w2c, self.near)

    def to_json(self) -> dict:
        return {
            "fx": float(self.fx), "fy": float(self.fy), "cx": float(self.cx), "cy": float(self.cy),
            "width": int(self.width), "height": int(self.height),
            "world_to_camera": [float(x) for x in self.world_to_camera.reshape(-1)],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Camera":
        try:
            return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                       int(d["width"]), int(d["height"]),
                       np.asarray(d["world_to_camera"], dtype=np.float64).reshape(4, 4))
        except (KeyError, ValueError, TypeError) as exc:
            raise ParameterError(f"bad camera description: {exc}") from exc


def look_at(eye, target, up=(0.0, 1.0, 0.0), *, width: int = 64, height: int = 64,
            fov_deg: float = 40.0) -> Camera:
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    back = eye - target
    back /= np.linalg.norm(back)
    right = np.cross(np.asarray(up, dtype=np.float64), back)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(np.array([0.0, 0.0, 1.0]), back)
    right /= np.linalg.norm(right)
    true_up = np.cross(back, right)
    r = np.stack([right, true_up, back])
    w2c = np.eye(4)
    w2c[:3, :3] = r
    w2c[:3, 3] = -r @ eye
    f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
    return Camera(f, f, width / 2, height / 2, width, height, w2c)


def orbit_camera(yaw_deg: float, pitch_deg: float, radius: float, target=(0.0, 0.0, 0.0), *,
                 width: int = 64, height: int = 64, fov_deg: float = 40.0) -> Camera:
    """Camera on a sphere around ``target``; yaw 0 / pitch 0 looks along -z from +z."""
    yaw, pitch = np.radians(yaw_deg), np.radians(pitch_deg)
    offset = radius * np.array([np.sin(yaw) * np.cos(pitch), np.sin(pitch), np.cos(yaw) * np.cos(pitch)])
    return look_at(np.asarray(target, dtype=np.float64) + offset, target, width=width, height=height,
                   fov_deg=fov_deg)
