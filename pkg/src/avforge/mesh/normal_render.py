"""Flat-shaded normal rendering with analytic vertex gradients.

Pixel coverage comes from the z-buffer and is held fixed; only the value of
each covered pixel (its face's camera-space unit normal) is differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera import Camera
from ..raster import VisibilityBuffer, rasterize_triangles


def _skew(a: np.ndarray) -> np.ndarray:
    """[..., 3] -> [..., 3, 3] cross-product matrices, skew(a) @ b = a x b."""
    z = np.zeros(a.shape[:-1])
    return np.stack([
        np.stack([z, -a[..., 2], a[..., 1]], -1),
        np.stack([a[..., 2], z, -a[..., 0]], -1),
        np.stack([-a[..., 1], a[..., 0], z], -1),
    ], -2)


def face_normal_jacobians(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """d n_f / d v_{f,k} for unit face normals, shape [F, 3 (vertex k), 3 (n), 3 (v)]."""
    tri = vertices[faces]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    c = np.cross(e1, e2)
    length = np.linalg.norm(c, axis=1)
    n = c / length[:, None]
    proj = (np.eye(3) - n[:, :, None] * n[:, None, :]) / length[:, None, None]  # dn/dc
    dc = np.stack([_skew(e2 - e1), -_skew(e2), _skew(e1)], axis=1)  # [F, 3, 3, 3]
    return np.einsum("fab,fkbc->fkac", proj, dc)


def face_normals_vjp(vertices: np.ndarray, faces: np.ndarray, grad_n: np.ndarray) -> np.ndarray:
    """Pull per-face gradients on unit normals [F, 3] back to vertices [V, 3]."""
    tri = vertices[faces]
    e1 = tri[:, 1] - tri[:, 0]
    e2 = tri[:, 2] - tri[:, 0]
    c = np.cross(e1, e2)
    length = np.linalg.norm(c, axis=1, keepdims=True)
    n = c / length
    gc = (grad_n - n * np.sum(n * grad_n, axis=1, keepdims=True)) / length
    g1 = np.cross(e2, gc)
    g2 = np.cross(gc, e1)
    out = np.zeros_like(vertices, dtype=np.float64)
    np.add.at(out, faces[:, 0], -(g1 + g2))
    np.add.at(out, faces[:, 1], g1)
    np.add.at(out, faces[:, 2], g2)
    return out


@dataclass
class NormalRender:
    """A rendered camera-space normal image and what is needed to differentiate it."""

    image: np.ndarray  # [H, W, 3], zero on background
    vis: VisibilityBuffer
    camera: Camera
    vertices: np.ndarray
    faces: np.ndarray

    @property
    def covered(self) -> np.ndarray:
        return self.vis.covered

    def pixel_jacobian(self, row: int, col: int) -> np.ndarray:
        """d(pixel normal)/d(vertices of covering face), [3 (vertex), 3 (n_cam), 3 (v)]."""
        f = int(self.vis.face_id[row, col])
        if f < 0:
            return np.zeros((3, 3, 3))
        jac = face_normal_jacobians(self.vertices, self.faces[f : f + 1])[0]
        return np.einsum("ab,kbc->kac", self.camera.rotation, jac)

    def face_gradient(self, grad_image: np.ndarray) -> np.ndarray:
        """Sum upstream pixel gradients [H, W, 3] per face in world space, [F, 3]."""
        m = self.covered
        g_world = grad_image[m] @ self.camera.rotation  # R^T g per pixel
        out = np.zeros((len(self.faces), 3))
        np.add.at(out, self.vis.face_id[m], g_world)
        return out

    def backward(self, grad_image: np.ndarray) -> np.ndarray:
        """Vertex gradient [V, 3] of sum(grad_image * image)."""
        return face_normals_vjp(self.vertices, self.faces, self.face_gradient(grad_image))


def render_normals_diff(mesh, camera: Camera, vis: VisibilityBuffer | None = None) -> NormalRender:
    """Render camera-space face normals of ``mesh`` (anything with vertices/faces)."""
    vertices = np.asarray(mesh.vertices, dtype=np.float64)
    faces = np.asarray(mesh.faces, dtype=np.int64).reshape(-1, 3)
    if vis is None:
        vis = rasterize_triangles(vertices, faces, camera)
    image = np.zeros(vis.face_id.shape + (3,))
    m = vis.covered
    if np.any(m):
        used = np.unique(vis.face_id[m])
        tri = vertices[faces[used]]
        c = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        n = np.zeros((len(faces), 3))
        n[used] = c / np.linalg.norm(c, axis=1, keepdims=True)
        image[m] = n[vis.face_id[m]] @ camera.rotation.T
    return NormalRender(image, vis, camera, vertices, faces)
