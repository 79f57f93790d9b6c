"""Initial rigged Gaussian cloud from surface samples of the rig and optional extra meshes."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..color_field import query_world
from ..errors import ParameterError
from ..geometry import face_areas, quat_identity
from ..mesh.rigging import nearest_face_rigging
from ..mesh.sampling import sample_surface_points
from ..mesh.types import TriMesh
from ..rig.model import BlendshapeRig, RigParams, deform
from .cloud import GaussianCloud, compute_face_frames, logit

INIT_OPACITY = 0.1
KNN = 3


def allocate_counts(areas, total: int) -> np.ndarray:
    """Split ``total`` samples across sources proportionally to area (largest remainder)."""
    areas = np.asarray(areas, dtype=np.float64)
    if total < len(areas) or not np.all(areas > 0):
        raise ParameterError("every source needs positive area and at least one sample")
    exact = areas / areas.sum() * total
    counts = np.maximum(np.floor(exact).astype(np.int64), 1)
    while counts.sum() > total:
        counts[np.argmax(counts)] -= 1
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[: total - counts.sum()]] += 1
    return counts


def knn_scale(points: np.ndarray, k: int = KNN) -> np.ndarray:
    """Mean distance to the k nearest other points; [N]."""
    n = len(points)
    if n < 2:
        return np.ones(n)
    k = min(k, n - 1)
    d, _ = cKDTree(points).query(points, k=k + 1)
    return np.maximum(d[:, 1:].mean(axis=1), 1e-6)


def bind_points(points: np.ndarray, faces: np.ndarray, vertices: np.ndarray, mesh_faces: np.ndarray,
                scales: np.ndarray, colors: np.ndarray) -> GaussianCloud:
    """Express world points in the frames of their binding faces (mesh in neutral pose)."""
    frames = compute_face_frames(vertices, mesh_faces)
    rot, cen, s = frames.rotation[faces], frames.centroid[faces], frames.scale[faces]
    local = np.einsum("nji,nj->ni", rot, points - cen) / s[:, None]
    log_scale = np.repeat(np.log(scales / s)[:, None], 3, axis=1)
    return GaussianCloud(local, quat_identity(len(points)), log_scale, np.full(len(points), logit(INIT_OPACITY)),
                         colors, faces)


def build_initial_cloud(rig: BlendshapeRig, count: int, seed: int = 0, field=None,
                        extra_meshes=(), default_color=(0.5, 0.5, 0.5)) -> GaussianCloud:
    """Sample ``count`` points over the rig surface plus ``extra_meshes`` and bind them to rig faces.

    ``extra_meshes`` is a sequence of (TriMesh, partition) pairs, e.g. the hair
    mesh bound to "scalp" and the clothing mesh bound to "body". Rig samples
    stay on their source face. Colors come from ``field`` (a HashGridField)
    when given, else ``default_color``.
    """
    posed = deform(rig, RigParams.neutral(rig))
    sources = [TriMesh(posed.vertices, rig.faces)] + [m for m, _ in extra_meshes]
    areas = [face_areas(m.vertices, m.faces).sum() for m in sources]
    counts = allocate_counts(areas, count)
    pts, faces = [], []
    for i, (mesh, n) in enumerate(zip(sources, counts)):
        samples = sample_surface_points(mesh, int(n), seed + i)
        pts.append(samples.points)
        if i == 0:
            faces.append(samples.faces)
        else:
            faces.append(nearest_face_rigging(samples.points, rig, extra_meshes[i - 1][1]))
    points = np.concatenate(pts)
    binding = np.concatenate(faces)
    if field is not None:
        colors = query_world(field, points)
    else:
        colors = np.tile(np.asarray(default_color, dtype=np.float64), (len(points), 1))
    return bind_points(points, binding, posed.vertices, rig.faces, knn_scale(points), colors)

