"""Mesh-pipeline data types."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..camera import Camera
from ..errors import ParameterError
from ..geometry import face_areas

FACE_LABELS = ("unlabeled", "face", "hair", "clothing")
UNLABELED, FACE, HAIR, CLOTHING = range(4)


@dataclass
class TriMesh:
    vertices: np.ndarray  # [V, 3]
    faces: np.ndarray  # [F, 3] int64
    face_labels: np.ndarray | None = None  # [F] index into FACE_LABELS

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.face_labels is not None:
            self.face_labels = np.asarray(self.face_labels, dtype=np.int64).reshape(-1)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def copy(self) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.faces.copy(),
                       None if self.face_labels is None else self.face_labels.copy())

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        return replace(self, vertices=np.array(vertices, dtype=np.float64),
                       faces=self.faces.copy(),
                       face_labels=None if self.face_labels is None else self.face_labels.copy())

    def validate(self, min_area: float = 1e-12) -> "TriMesh":
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ParameterError("face index out of range")
        if self.face_labels is not None and len(self.face_labels) != len(self.faces):
            raise ParameterError("face_labels length does not match face count")
        areas = face_areas(self.vertices, self.faces)
        bad = np.nonzero(areas <= min_area)[0]
        if len(bad):
            raise ParameterError(f"degenerate face {int(bad[0])} (area {areas[bad[0]]:.3g})")
        return self

    def submesh(self, face_mask: np.ndarray) -> "TriMesh":
        """Faces selected by ``face_mask`` with unused vertices dropped."""
        faces = self.faces[face_mask]
        used, inverse = np.unique(faces.reshape(-1), return_inverse=True)
        labels = None if self.face_labels is None else self.face_labels[face_mask]
        return TriMesh(self.vertices[used], inverse.reshape(-1, 3), labels)

    def labeled(self, label: int) -> "TriMesh":
        if self.face_labels is None:
            raise ParameterError("mesh has no face labels")
        return self.submesh(self.face_labels == label)


@dataclass
class DensityGrid:
    values: np.ndarray  # [nx, ny, nz], indexed [i, j, k]
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    spacing: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.spacing = np.broadcast_to(np.asarray(self.spacing, dtype=np.float64), (3,)).copy()

    @property
    def resolution(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.values.shape)

    def validate(self) -> "DensityGrid":
        if self.values.ndim != 3:
            raise ParameterError("density grid must be 3-dimensional")
        if np.any(self.spacing <= 0) or not np.all(np.isfinite(self.spacing)):
            raise ParameterError("grid spacing must be strictly positive")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("grid contains non-finite values")
        return self

    @classmethod
    def from_function(cls, fn, lo, hi, resolution) -> "DensityGrid":
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        res = np.broadcast_to(np.asarray(resolution), (3,))
        axes = [np.linspace(lo[d], hi[d], int(res[d])) for d in range(3)]
        x, y, z = np.meshgrid(*axes, indexing="ij")
        values = fn(np.stack([x, y, z], axis=-1))
        spacing = (hi - lo) / (res - 1)
        return cls(values, lo, spacing)


@dataclass
class View:
    camera: Camera
    rgb: np.ndarray | None = None  # [H, W, 3] in [0, 1]
    normal: np.ndarray | None = None  # [H, W, 3] camera-space unit normals, 0 where undefined
    face_mask: np.ndarray | None = None  # [H, W] bool
    hair_mask: np.ndarray | None = None  # [H, W] bool


@dataclass
class ViewSet:
    views: list[View]

    def __len__(self) -> int:
        return len(self.views)

    def __iter__(self):
        return iter(self.views)

    def __getitem__(self, i) -> View:
        return self.views[i]

    def validate(self) -> "ViewSet":
        sizes = {(v.camera.width, v.camera.height) for v in self.views}
        if len(sizes) > 1:
            raise ParameterError(f"views disagree on resolution: {sorted(sizes)}")
        for i, v in enumerate(self.views):
            v.camera.validate()
            if v.normal is not None:
                n = np.linalg.norm(v.normal, axis=-1)
                defined = n > 0.5
                if np.any(np.abs(n[defined] - 1) > 1e-3):
                    raise ParameterError(f"view {i}: normals not unit length")
        return self
