"""Conditioning maps rendered from a posed rig: camera-space normals and partition labels."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..camera import Camera
from ..errors import ParameterError
from ..geometry import face_normals
from ..raster import VisibilityBuffer, rasterize_triangles
from .model import LABEL_IDS, PARTITION_NAMES, PosedMesh


def render_normal_map(mesh: PosedMesh, camera: Camera, vis: VisibilityBuffer | None = None) -> np.ndarray:
    """[H, W, 3] flat-shaded camera-space face normals, zero on background."""
    if vis is None:
        vis = rasterize_triangles(mesh.vertices, mesh.faces, camera)
    out = np.zeros(vis.face_id.shape + (3,))
    if len(mesh.faces) == 0:
        return out
    n_cam = face_normals(mesh.vertices, mesh.faces) @ camera.rotation.T
    m = vis.covered
    out[m] = n_cam[vis.face_id[m]]
    return out


def face_label_array(n_faces: int, partitions: Mapping[str, np.ndarray] | np.ndarray) -> np.ndarray:
    """Per-face label ids (0 = unlabeled) from a partition map or a face_partition array."""
    if isinstance(partitions, np.ndarray):
        fp = partitions.astype(np.int64)
        return np.where(fp >= 0, fp + 1, 0)
    labels = np.zeros(n_faces, dtype=np.int64)
    for name, idx in partitions.items():
        if name not in LABEL_IDS:
            raise ParameterError(f"unknown partition {name!r}; known: {', '.join(PARTITION_NAMES)}")
        labels[np.asarray(idx, dtype=np.int64)] = LABEL_IDS[name]
    return labels


def render_segmentation_map(mesh: PosedMesh, partitions, camera: Camera,
                            vis: VisibilityBuffer | None = None) -> np.ndarray:
    """[H, W] uint8 partition label of the nearest face (ids in ``LABEL_IDS``, 0 background)."""
    labels = face_label_array(len(mesh.faces), partitions)
    if vis is None:
        vis = rasterize_triangles(mesh.vertices, mesh.faces, camera)
    out = np.zeros(vis.face_id.shape, dtype=np.uint8)
    m = vis.covered
    out[m] = labels[vis.face_id[m]]
    return out
