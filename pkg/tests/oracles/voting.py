"""Face voting recomputed from ray-cast visibility."""

from __future__ import annotations

import numpy as np

from .raycast import raycast

FACE, HAIR, CLOTHING = 1, 2, 3


def vote_labels(vertices, faces, views, threshold=0.5):
    F = len(faces)
    face_sum, hair_sum, votes = np.zeros(F), np.zeros(F), np.zeros(F)
    for view in views:
        fid, _ = raycast(vertices, faces, view.camera)
        for f in range(F):
            pix = fid == f
            n = pix.sum()
            if n == 0:
                continue
            votes[f] += 1
            face_sum[f] += view.face_mask[pix].sum() / n
            hair_sum[f] += view.hair_mask[pix].sum() / n
    labels = np.full(F, CLOTHING)
    for f in range(F):
        if votes[f] == 0:
            continue
        ff, hf = face_sum[f] / votes[f], hair_sum[f] / votes[f]
        if max(ff, hf) >= threshold:
            labels[f] = HAIR if hf > ff else FACE
    return labels
