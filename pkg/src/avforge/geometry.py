"""Rotation and triangle helpers shared across modules.

Quaternions are stored (w, x, y, z).
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise NumericError("zero-norm quaternion")
    return q / n


def quat_identity(n: int | None = None) -> np.ndarray:
    if n is None:
        return np.array([1.0, 0.0, 0.0, 0.0])
    out = np.zeros((n, 4))
    out[:, 0] = 1.0
    return out


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b (rotation b first, then a)."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_from_axis_angle(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=np.float64)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """[..., 4] -> [..., 3, 3]. Input is normalized first."""
    q = quat_normalize(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def quat_to_matrix_vjp(q: np.ndarray, grad_m: np.ndarray) -> np.ndarray:
    """Pull a gradient on R(q) back to the (unnormalized) quaternion."""
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qn = q / norm
    w, x, y, z = np.moveaxis(qn, -1, 0)
    zero = np.zeros_like(w)
    # dR/dw, dR/dx, dR/dy, dR/dz for a unit quaternion, each [..., 3, 3]
    dw = np.stack([zero, -z, y, z, zero, -x, -y, x, zero], -1)
    dx = np.stack([zero, y, z, y, -2 * x, -w, z, w, -2 * x], -1)
    dy = np.stack([-2 * y, x, w, x, zero, z, -w, z, -2 * y], -1)
    dz = np.stack([-2 * z, -w, x, w, -2 * z, y, x, y, zero], -1)
    g = grad_m.reshape(grad_m.shape[:-2] + (9,))
    gq = 2.0 * np.stack(
        [np.sum(g * dw, -1), np.sum(g * dx, -1), np.sum(g * dy, -1), np.sum(g * dz, -1)], -1
    )
    # through q / |q|
    return (gq - qn * np.sum(gq * qn, -1, keepdims=True)) / norm


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrices [..., 3, 3] -> unit quaternions with w >= 0."""
    from scipy.spatial.transform import Rotation

    m = np.asarray(m, dtype=np.float64)
    flat = m.reshape(-1, 3, 3)
    xyzw = Rotation.from_matrix(flat).as_quat()
    q = np.concatenate([xyzw[:, 3:], xyzw[:, :3]], axis=1)
    q = np.where(q[:, :1] < 0, -q, q)
    return q.reshape(m.shape[:-2] + (4,))


def rotation_about(axis, angle) -> np.ndarray:
    return quat_to_matrix(quat_from_axis_angle(axis, angle))


def rigid_matrix(rotation: np.ndarray | None = None, translation=None) -> np.ndarray:
    t = np.eye(4)
    if rotation is not None:
        t[:3, :3] = rotation
    if translation is not None:
        t[:3, 3] = translation
    return t


def transform_points(transform: np.ndarray, points: np.ndarray) -> np.ndarray:
    return points @ transform[:3, :3].T + transform[:3, 3]


def face_normals(vertices: np.ndarray, faces: np.ndarray, normalize: bool = True) -> np.ndarray:
    v0, v1, v2 = (vertices[faces[:, k]] for k in range(3))
    n = np.cross(v1 - v0, v2 - v0)
    if not normalize:
        return n
    length = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.where(length > 0, length, 1.0)


def face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    return 0.5 * np.linalg.norm(face_normals(vertices, faces, normalize=False), axis=1)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals, unit length (zero for isolated vertices)."""
    fn = face_normals(vertices, faces, normalize=False)
    vn = np.zeros_like(vertices, dtype=np.float64)
    for k in range(3):
        np.add.at(vn, faces[:, k], fn)
    length = np.linalg.norm(vn, axis=1, keepdims=True)
    return vn / np.where(length > 0, length, 1.0)


def edge_adjacent_face_pairs(faces: np.ndarray) -> np.ndarray:
    """[P, 2] pairs of faces sharing an edge (each interior edge once)."""
    faces = np.asarray(faces)
    nf = len(faces)
    if nf == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    owner = np.tile(np.arange(nf), 3)
    order = np.lexsort((owner, e[:, 1], e[:, 0]))
    e, owner = e[order], owner[order]
    same = np.all(e[1:] == e[:-1], axis=1)
    idx = np.nonzero(same)[0]
    pairs = np.stack([owner[idx], owner[idx + 1]], axis=1)
    return pairs[pairs[:, 0] != pairs[:, 1]]
