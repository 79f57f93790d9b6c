"""Z-buffered triangle rasterization into a visibility buffer.

Every pixel whose center lies inside a projected triangle is a candidate for
that triangle; the nearest candidate wins, equal depths go to the lower face
index. No anti-aliasing and no back-face culling. Faces with any vertex at or
behind the near plane are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera

_CHUNK_PAIRS = 1 << 21


@dataclass
class VisibilityBuffer:
    face_id: np.ndarray  # [H, W] int64, -1 where empty
    bary: np.ndarray  # [H, W, 3] perspective-correct barycentrics
    depth: np.ndarray  # [H, W] positive view depth, inf where empty

    @property
    def covered(self) -> np.ndarray:
        return self.face_id >= 0

    def hit_points(self, vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
        """World-space hit points [H, W, 3] (zeros where empty)."""
        out = np.zeros(self.face_id.shape + (3,))
        m = self.covered
        tri = vertices[faces[self.face_id[m]]]  # [K, 3, 3]
        out[m] = np.einsum("kj,kjc->kc", self.bary[m], tri)
        return out


def _pixel_pairs(lo_x, hi_x, lo_y, hi_y):
    """Enumerate (face, row, col) for the inclusive pixel boxes of each face."""
    w = np.maximum(hi_x - lo_x + 1, 0)
    h = np.maximum(hi_y - lo_y + 1, 0)
    counts = w * h
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(counts)), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total) - start
    ww = np.maximum(w[owner], 1)
    rows = lo_y[owner] + local // ww
    cols = lo_x[owner] + local % ww
    return owner, rows, cols


def rasterize_triangles(vertices: np.ndarray, faces: np.ndarray, camera: Camera) -> VisibilityBuffer:
    camera.validate()
    H, W = camera.height, camera.width
    best_depth = np.full(H * W, np.inf)
    best_face = np.full(H * W, -1, dtype=np.int64)
    best_bary = np.zeros((H * W, 3))
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) == 0 or len(vertices) == 0:
        return VisibilityBuffer(best_face.reshape(H, W), best_bary.reshape(H, W, 3),
                                best_depth.reshape(H, W))

    pc = camera.to_camera(vertices)
    depth_v = -pc[:, 2]
    uv = camera.project_camera(pc)
    fd = depth_v[faces]  # [F, 3]
    keep = np.all(fd > camera.near, axis=1)
    fuv = uv[faces]  # [F, 3, 2]
    e1 = fuv[:, 1] - fuv[:, 0]
    e2 = fuv[:, 2] - fuv[:, 0]
    area = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    keep &= np.abs(area) > 1e-12
    fidx = np.nonzero(keep)[0]
    if len(fidx) == 0:
        return VisibilityBuffer(best_face.reshape(H, W), best_bary.reshape(H, W, 3),
                                best_depth.reshape(H, W))

    umin = fuv[fidx, :, 0].min(1)
    umax = fuv[fidx, :, 0].max(1)
    vmin = fuv[fidx, :, 1].min(1)
    vmax = fuv[fidx, :, 1].max(1)
    lo_x = np.clip(np.ceil(umin - 0.5), 0, W).astype(np.int64)
    hi_x = np.clip(np.floor(umax - 0.5), -1, W - 1).astype(np.int64)
    lo_y = np.clip(np.ceil(vmin - 0.5), 0, H).astype(np.int64)
    hi_y = np.clip(np.floor(vmax - 0.5), -1, H - 1).astype(np.int64)
    counts = np.maximum(hi_x - lo_x + 1, 0) * np.maximum(hi_y - lo_y + 1, 0)

    # Chunk faces so the candidate list stays bounded.
    csum = np.cumsum(counts)
    bounds = [0]
    while bounds[-1] < len(fidx):
        base = csum[bounds[-1] - 1] if bounds[-1] > 0 else 0
        nxt = int(np.searchsorted(csum, base + _CHUNK_PAIRS, side="right"))
        bounds.append(max(nxt, bounds[-1] + 1))
    bounds[-1] = len(fidx)

    for a, b in zip(bounds[:-1], bounds[1:]):
        sel = slice(a, b)
        owner, rows, cols = _pixel_pairs(lo_x[sel], hi_x[sel], lo_y[sel], hi_y[sel])
        if len(owner) == 0:
            continue
        f = fidx[sel][owner]
        px = cols + 0.5
        py = rows + 0.5
        p0 = fuv[f, 0]
        p1 = fuv[f, 1]
        p2 = fuv[f, 2]
        ar = area[f]
        l1 = ((px - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (py - p0[:, 1]) * (p2[:, 0] - p0[:, 0])) / ar
        l2 = ((p1[:, 0] - p0[:, 0]) * (py - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (px - p0[:, 0])) / ar
        l0 = 1.0 - l1 - l2
        inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
        if not np.any(inside):
            continue
        f = f[inside]
        lam = np.stack([l0[inside], l1[inside], l2[inside]], axis=1)
        pix = rows[inside] * W + cols[inside]
        w = lam / fd[f]
        inv = w.sum(1)
        d = 1.0 / inv
        bary = w / inv[:, None]
        order = np.lexsort((f, d, pix))
        pix, d, f, bary = pix[order], d[order], f[order], bary[order]
        first = np.ones(len(pix), dtype=bool)
        first[1:] = pix[1:] != pix[:-1]
        pix, d, f, bary = pix[first], d[first], f[first], bary[first]
        better = (d < best_depth[pix]) | ((d == best_depth[pix]) & (f < best_face[pix]))
        pix, d, f, bary = pix[better], d[better], f[better], bary[better]
        best_depth[pix] = d
        best_face[pix] = f
        best_bary[pix] = bary

    return VisibilityBuffer(best_face.reshape(H, W), best_bary.reshape(H, W, 3),
                            best_depth.reshape(H, W))
