from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import ParameterError
from .types import TriMesh


def vertex_adjacency(n_vertices: int, faces: np.ndarray) -> sp.csr_matrix:
    """Symmetric 0/1 vertex adjacency from triangle edges."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.concatenate([e, e[:, ::-1]])
    a = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n_vertices, n_vertices)).tocsr()
    a.data[:] = 1.0
    return a


def laplacian_smooth(mesh: TriMesh, iterations: int = 20, lam: float = 0.5) -> TriMesh:
    """Uniform-weight Laplacian smoothing.

    Each iteration moves every vertex by ``lam`` times the offset to the mean of
    its one-ring neighbors. Isolated vertices stay put. Returns a new mesh.
    """
    if not (0.0 < lam <= 1.0):
        raise ParameterError(f"lambda must be in (0, 1], got {lam}")
    if iterations < 0:
        raise ParameterError(f"iterations must be >= 0, got {iterations}")
    v = mesh.vertices.copy()
    if iterations == 0 or mesh.n_faces == 0:
        return mesh.with_vertices(v)
    adj = vertex_adjacency(len(v), mesh.faces)
    deg = np.asarray(adj.sum(axis=1)).reshape(-1)
    has = deg > 0
    inv = np.where(has, 1.0 / np.where(has, deg, 1.0), 0.0)
    for _ in range(iterations):
        avg = (adj @ v) * inv[:, None]
        v[has] += lam * (avg[has] - v[has])
    return mesh.with_vertices(v)
