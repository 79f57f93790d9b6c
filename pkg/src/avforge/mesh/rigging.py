"""Nearest-face binding of free points onto a rig partition."""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError

TIE_TOLERANCE = 1e-9  # relative distance difference treated as a tie


def closest_point_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Closest points on triangles (a, b, c) to points p, all broadcast to [..., 3].

    Voronoi-region walk (Ericson, Real-Time Collision Detection 5.1.5).
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.sum(ab * ap, -1)
    d2 = np.sum(ac * ap, -1)
    bp = p - b
    d3 = np.sum(ab * bp, -1)
    d4 = np.sum(ac * bp, -1)
    cp = p - c
    d5 = np.sum(ab * cp, -1)
    d6 = np.sum(ac * cp, -1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        result = a + ab * v[..., None] + ac * w[..., None]

        # edge regions, later assignments take precedence in reverse order of the walk
        m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        result = np.where(m[..., None], b + t[..., None] * (c - b), result)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        t = d2 / (d2 - d6)
        result = np.where(m[..., None], a + t[..., None] * ac, result)
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        t = d1 / (d1 - d3)
        result = np.where(m[..., None], a + t[..., None] * ab, result)

    # vertex regions
    result = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, result)
    result = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, result)
    result = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, result)
    return result


def point_triangle_distance_sq(points: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Squared distances [N, F] between points [N, 3] and triangles [F, 3, 3]."""
    p = points[:, None, :]
    q = closest_point_on_triangles(p, tris[None, :, 0], tris[None, :, 1], tris[None, :, 2])
    return np.sum((q - p) ** 2, -1)


def nearest_faces(points: np.ndarray, vertices: np.ndarray, faces: np.ndarray,
                  candidates: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """For each point the candidate face at minimum distance; ties (within ``TIE_TOLERANCE``) go to the lowest index."""
    candidates = np.unique(np.asarray(candidates, dtype=np.int64))
    if len(candidates) == 0:
        raise ParameterError("no candidate faces")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tris = vertices[faces[candidates]]
    out = np.empty(len(points), dtype=np.int64)
    step = max(1, chunk * 64 // max(len(candidates), 1))
    for s in range(0, len(points), step):
        d = point_triangle_distance_sq(points[s : s + step], tris)
        # Faces sharing the closest edge or vertex are equidistant up to rounding.
        near = d <= d.min(axis=1, keepdims=True) * (1.0 + TIE_TOLERANCE) + 1e-300
        out[s : s + step] = candidates[np.argmax(near, axis=1)]
    return out


def nearest_face_rigging(points: np.ndarray, rig, partition: str) -> np.ndarray:
    """Bind each point to the closest face of ``rig``'s ``partition`` (template pose)."""
    faces_in = rig.partition_faces(partition)
    if len(faces_in) == 0:
        raise ParameterError(f"partition {partition!r} is empty")
    return nearest_faces(points, rig.template_vertices, rig.faces, faces_in)
