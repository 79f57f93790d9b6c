"""Multi-view face voting: label mesh faces from 2D face/hair masks."""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError
from ..raster import rasterize_triangles
from .types import CLOTHING, FACE, HAIR, TriMesh, ViewSet

VOTE_THRESHOLD = 0.5


def face_vote_fractions(mesh: TriMesh, views: ViewSet):
    """Per-face mean (over voting views) of the fraction of its visible pixels in each mask.

    Returns (face_fraction [F], hair_fraction [F], voting_view_count [F]).
    """
    F = mesh.n_faces
    face_sum = np.zeros(F)
    hair_sum = np.zeros(F)
    n_votes = np.zeros(F, dtype=np.int64)
    for i, view in enumerate(views):
        if view.face_mask is None or view.hair_mask is None:
            raise ParameterError(f"view {i} lacks face/hair masks")
        vis = rasterize_triangles(mesh.vertices, mesh.faces, view.camera)
        m = vis.covered
        fid = vis.face_id[m]
        pixels = np.bincount(fid, minlength=F)
        in_face = np.bincount(fid, weights=np.asarray(view.face_mask, bool)[m].astype(float), minlength=F)
        in_hair = np.bincount(fid, weights=np.asarray(view.hair_mask, bool)[m].astype(float), minlength=F)
        seen = pixels > 0
        face_sum[seen] += in_face[seen] / pixels[seen]
        hair_sum[seen] += in_hair[seen] / pixels[seen]
        n_votes += seen
    denom = np.maximum(n_votes, 1)
    return face_sum / denom, hair_sum / denom, n_votes


def segment_by_face_voting(mesh: TriMesh, views: ViewSet, threshold: float = VOTE_THRESHOLD) -> TriMesh:
    """Label every face face/hair/clothing (ids index ``FACE_LABELS``).

    The larger of the mean face and hair fractions wins if it reaches
    ``threshold`` (face wins an exact tie); everything else, including faces no
    view sees, becomes clothing.
    """
    face_frac, hair_frac, n_votes = face_vote_fractions(mesh, views)
    best = np.where(hair_frac > face_frac, HAIR, FACE)
    best_frac = np.maximum(face_frac, hair_frac)
    labels = np.where((n_votes > 0) & (best_frac >= threshold), best, CLOTHING).astype(np.int64)
    out = mesh.copy()
    out.face_labels = labels
    return out
