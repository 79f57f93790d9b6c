from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError
from ..geometry import face_areas
from .types import TriMesh


@dataclass
class SurfaceSamples:
    points: np.ndarray  # [N, 3]
    faces: np.ndarray  # [N] source face index
    bary: np.ndarray  # [N, 3]


def sample_surface_points(mesh: TriMesh, count: int, seed: int = 0) -> SurfaceSamples:
    """Area-weighted uniform samples on the surface of ``mesh``."""
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    areas = face_areas(mesh.vertices, mesh.faces)
    total = areas.sum()
    if not total > 0:
        raise ParameterError("cannot sample a mesh with zero surface area")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=count, p=areas / total)
    r1, r2 = rng.random((2, count))
    s = np.sqrt(r1)
    bary = np.stack([1.0 - s, s * (1.0 - r2), s * r2], axis=1)
    tri = mesh.vertices[mesh.faces[face]]
    points = np.einsum("nk,nkc->nc", bary, tri)
    return SurfaceSamples(points, face.astype(np.int64), bary)
