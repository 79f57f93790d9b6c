"""Blendshape head rig with linear blend skinning.

Skinning follows the SMPL-X convention: blendshape offsets are added to the
template in rest pose, each joint's world transform is accumulated down the
kinematic chain from rest-relative offsets, the rest pose is factored out, and
vertices are blended by their skinning weights. The rig-level global transform
is applied last.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.csgraph import connected_components

from ..errors import ParameterError
from ..geometry import quat_identity, quat_to_matrix, vertex_normals

PARTITION_NAMES = (
    "face", "scalp", "body", "jaw", "eyeball_l", "eyeball_r", "eyelid_region",
    "teeth_upper", "teeth_lower", "mouth_interior",
)
# Segmentation label ids: 0 is background, partitions count up from 1.
LABEL_IDS = {name: i + 1 for i, name in enumerate(PARTITION_NAMES)}
JOINT_NAMES = ("root", "neck", "head", "jaw", "eye_l", "eye_r")


@dataclass
class BlendshapeRig:
    template_vertices: np.ndarray  # [V, 3]
    faces: np.ndarray  # [F, 3]
    shape_basis: np.ndarray  # [V, 3, S]
    expression_basis: np.ndarray  # [V, 3, E]
    joints: np.ndarray  # [J, 3] rest positions
    parents: np.ndarray  # [J], parents[0] == -1
    skinning_weights: np.ndarray  # [V, J]
    face_partition: np.ndarray  # [F] index into PARTITION_NAMES, -1 for none
    eyelid_basis: np.ndarray | None = None  # [2, V, 3] full-closure offsets (left, right)
    joint_names: tuple[str, ...] = JOINT_NAMES

    def __post_init__(self):
        self.template_vertices = np.asarray(self.template_vertices, dtype=np.float64).reshape(-1, 3)
        nv = len(self.template_vertices)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.shape_basis = np.asarray(self.shape_basis, dtype=np.float64).reshape(nv, 3, -1)
        self.expression_basis = np.asarray(self.expression_basis, dtype=np.float64).reshape(nv, 3, -1)
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(-1, 3)
        self.parents = np.asarray(self.parents, dtype=np.int64).reshape(-1)
        self.skinning_weights = np.asarray(self.skinning_weights, dtype=np.float64).reshape(nv, -1)
        self.face_partition = np.asarray(self.face_partition, dtype=np.int64).reshape(-1)
        if self.eyelid_basis is None:
            self.eyelid_basis = np.zeros((2, nv, 3))
        self.eyelid_basis = np.asarray(self.eyelid_basis, dtype=np.float64).reshape(2, nv, 3)
        self.joint_names = tuple(self.joint_names)

    @property
    def n_vertices(self) -> int:
        return len(self.template_vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_shape(self) -> int:
        return self.shape_basis.shape[2]

    @property
    def n_expression(self) -> int:
        return self.expression_basis.shape[2]

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def joint_index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise ParameterError(f"rig has no joint named {name!r}") from None

    def partition_faces(self, name: str) -> np.ndarray:
        if name not in PARTITION_NAMES:
            raise ParameterError(f"unknown partition {name!r}")
        return np.nonzero(self.face_partition == PARTITION_NAMES.index(name))[0]

    @property
    def partitions(self) -> dict[str, np.ndarray]:
        return {name: self.partition_faces(name) for name in PARTITION_NAMES}

    def validate(self) -> "BlendshapeRig":
        w = self.skinning_weights
        if w.shape != (self.n_vertices, self.n_joints):
            raise ParameterError(f"skinning weights shape {w.shape} != {(self.n_vertices, self.n_joints)}")
        if np.any(w < 0) or np.any(np.abs(w.sum(1) - 1.0) > 1e-6):
            raise ParameterError("skinning weight rows must be nonnegative and sum to 1")
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= self.n_vertices):
            raise ParameterError("face index out of range")
        if len(self.face_partition) != self.n_faces:
            raise ParameterError("face_partition length does not match face count")
        if self.parents[0] != -1 or np.any(self.parents[1:] < 0) or np.any(
            self.parents[1:] >= np.arange(1, self.n_joints)
        ):
            raise ParameterError("joint parents must form a tree rooted at 0 (parents[j] < j)")
        if len(self.joint_names) != self.n_joints:
            raise ParameterError("joint_names length does not match joints")
        return self

    def rig_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for a in (self.template_vertices.astype("<f4"), self.faces.astype("<u4"),
                  self.skinning_weights.astype("<f4")):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]


@dataclass
class RigParams:
    shape: np.ndarray
    expression: np.ndarray
    joint_rotations: np.ndarray  # [J, 4]
    jaw: np.ndarray = field(default_factory=quat_identity)  # [4]
    eyelids: np.ndarray = field(default_factory=lambda: np.zeros(2))  # closure, 0 open .. 1 closed
    eye_gaze: np.ndarray = field(default_factory=lambda: quat_identity(2))  # [2, 4]
    global_transform: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.shape = np.asarray(self.shape, dtype=np.float64).reshape(-1)
        self.expression = np.asarray(self.expression, dtype=np.float64).reshape(-1)
        self.joint_rotations = np.asarray(self.joint_rotations, dtype=np.float64).reshape(-1, 4)
        self.jaw = np.asarray(self.jaw, dtype=np.float64).reshape(4)
        self.eyelids = np.clip(np.asarray(self.eyelids, dtype=np.float64).reshape(2), 0.0, 1.0)
        self.eye_gaze = np.asarray(self.eye_gaze, dtype=np.float64).reshape(2, 4)
        self.global_transform = np.asarray(self.global_transform, dtype=np.float64).reshape(4, 4)

    @classmethod
    def neutral(cls, rig: BlendshapeRig) -> "RigParams":
        return cls(np.zeros(rig.n_shape), np.zeros(rig.n_expression), quat_identity(rig.n_joints))

    def copy(self, **changes) -> "RigParams":
        base = {k: np.array(getattr(self, k)) for k in
                ("shape", "expression", "joint_rotations", "jaw", "eyelids", "eye_gaze", "global_transform")}
        base.update(changes)
        return RigParams(**base)

    def validate(self, rig: BlendshapeRig) -> "RigParams":
        if self.shape.shape != (rig.n_shape,):
            raise ParameterError(f"shape has {self.shape.size} coefficients, rig expects {rig.n_shape}")
        if self.expression.shape != (rig.n_expression,):
            raise ParameterError(
                f"expression has {self.expression.size} coefficients, rig expects {rig.n_expression}")
        if self.joint_rotations.shape != (rig.n_joints, 4):
            raise ParameterError(
                f"joint_rotations has shape {self.joint_rotations.shape}, rig expects ({rig.n_joints}, 4)")
        quats = np.concatenate([self.joint_rotations, self.jaw[None], self.eye_gaze])
        if np.any(np.abs(np.linalg.norm(quats, axis=1) - 1.0) > 1e-6):
            raise ParameterError("rig rotations must be unit quaternions")
        g = self.global_transform
        if not np.allclose(g[:3, :3] @ g[:3, :3].T, np.eye(3), atol=1e-6) or not np.allclose(g[3], [0, 0, 0, 1]):
            raise ParameterError("global_transform must be rigid")
        return self

    def to_json(self) -> dict:
        return {
            "shape": self.shape.tolist(), "expression": self.expression.tolist(),
            "joint_rotations": self.joint_rotations.tolist(), "jaw": self.jaw.tolist(),
            "eyelids": self.eyelids.tolist(), "eye_gaze": self.eye_gaze.tolist(),
            "global_transform": self.global_transform.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "RigParams":
        try:
            return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})
        except TypeError as exc:
            raise ParameterError(f"bad rig parameters: {exc}") from exc


@dataclass
class PosedMesh:
    vertices: np.ndarray  # [V, 3]
    faces: np.ndarray  # [F, 3], shared with the rig
    per_vertex_normals: np.ndarray  # [V, 3]


def joint_transforms(rig: BlendshapeRig, params: RigParams) -> np.ndarray:
    """Skinning transforms [J, 4, 4] mapping rest-pose points to posed points."""
    local_r = quat_to_matrix(params.joint_rotations)
    jaw = rig.joint_names.index("jaw") if "jaw" in rig.joint_names else None
    eyes = [rig.joint_names.index(n) if n in rig.joint_names else None for n in ("eye_l", "eye_r")]
    if jaw is not None:
        local_r[jaw] = local_r[jaw] @ quat_to_matrix(params.jaw)
    for k, j in enumerate(eyes):
        if j is not None:
            local_r[j] = local_r[j] @ quat_to_matrix(params.eye_gaze[k])

    J = rig.joints
    world = np.zeros((rig.n_joints, 4, 4))
    for j in range(rig.n_joints):
        local = np.eye(4)
        local[:3, :3] = local_r[j]
        p = rig.parents[j]
        local[:3, 3] = J[j] - (J[p] if p >= 0 else 0.0)
        world[j] = local if p < 0 else world[p] @ local
    skin = world.copy()
    skin[:, :3, 3] -= np.einsum("jab,jb->ja", world[:, :3, :3], J)
    return skin


def deform(rig: BlendshapeRig, params: RigParams) -> PosedMesh:
    params.validate(rig)
    v = (rig.template_vertices
         + rig.shape_basis @ params.shape
         + rig.expression_basis @ params.expression
         + np.einsum("k,kvc->vc", params.eyelids, rig.eyelid_basis))
    skin = joint_transforms(rig, params)
    blended = np.einsum("vj,jab->vab", rig.skinning_weights, skin)  # [V, 4, 4]
    posed = np.einsum("vab,vb->va", blended[:, :3, :3], v) + blended[:, :3, 3]
    g = params.global_transform
    posed = posed @ g[:3, :3].T + g[:3, 3]
    return PosedMesh(posed, rig.faces, vertex_normals(posed, rig.faces))


def _split_components(teeth) -> np.ndarray:
    """Per-face upper(True)/lower(False) split from two connected components."""
    from ..mesh.smoothing import vertex_adjacency

    adj = vertex_adjacency(teeth.n_vertices, teeth.faces)
    n, comp = connected_components(adj, directed=False)
    used = np.unique(teeth.faces)
    comps = np.unique(comp[used])
    if len(comps) != 2:
        raise ParameterError(
            f"teeth mesh has {len(comps)} connected components and no upper/lower labels; expected 2")
    mean_y = [teeth.vertices[used[comp[used] == c], 1].mean() for c in comps]
    upper = comps[int(np.argmax(mean_y))]
    return comp[teeth.faces[:, 0]] == upper


def attach_teeth(rig: BlendshapeRig, teeth, upper_faces: np.ndarray | None = None) -> BlendshapeRig:
    """Append a teeth mesh: upper teeth ride the head joint, lower teeth the jaw joint.

    ``upper_faces`` is an optional per-face boolean split; otherwise the mesh
    must have exactly two connected components and the higher one is upper.
    """
    if upper_faces is None:
        upper_faces = _split_components(teeth)
    upper_faces = np.asarray(upper_faces, dtype=bool)
    if upper_faces.shape != (teeth.n_faces,):
        raise ParameterError("upper_faces must have one entry per teeth face")
    head, jaw = rig.joint_index("head"), rig.joint_index("jaw")

    nv = teeth.n_vertices
    upper_v = np.zeros(nv, dtype=bool)
    upper_v[teeth.faces[upper_faces].reshape(-1)] = True
    lower_v = np.zeros(nv, dtype=bool)
    lower_v[teeth.faces[~upper_faces].reshape(-1)] = True
    if np.any(upper_v & lower_v):
        raise ParameterError("teeth vertices shared between upper and lower parts")
    w = np.zeros((nv, rig.n_joints))
    w[:, jaw] = lower_v
    w[:, head] = ~lower_v

    part = np.where(upper_faces, PARTITION_NAMES.index("teeth_upper"), PARTITION_NAMES.index("teeth_lower"))
    off = rig.n_vertices
    return replace(
        rig,
        template_vertices=np.concatenate([rig.template_vertices, teeth.vertices]),
        faces=np.concatenate([rig.faces, teeth.faces + off]),
        shape_basis=np.concatenate([rig.shape_basis, np.zeros((nv, 3, rig.n_shape))]),
        expression_basis=np.concatenate([rig.expression_basis, np.zeros((nv, 3, rig.n_expression))]),
        skinning_weights=np.concatenate([rig.skinning_weights, w]),
        face_partition=np.concatenate([rig.face_partition, part]),
        eyelid_basis=np.concatenate([rig.eyelid_basis, np.zeros((2, nv, 3))], axis=1),
    )
