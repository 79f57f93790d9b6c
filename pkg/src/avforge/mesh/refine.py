"""Normal-supervised vertex refinement.

Loss = L_normal + w * L_consistency, where L_normal is one minus the cosine
between rendered and target normals (averaged over covered pixels, then over
views) and L_consistency averages 1 - n_j . n_k over edge-adjacent face pairs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import OptimizationError, ParameterError
from ..geometry import edge_adjacent_face_pairs, face_normals
from ..optim import Adam
from .normal_render import face_normals_vjp, render_normals_diff
from .types import TriMesh, ViewSet

log = logging.getLogger(__name__)


def consistency_loss(vertices: np.ndarray, faces: np.ndarray, pairs: np.ndarray | None = None,
                     grad: bool = True):
    """Mean of (1 - n_j . n_k) over adjacent face pairs; returns (loss, vertex grad or None)."""
    if pairs is None:
        pairs = edge_adjacent_face_pairs(faces)
    if len(pairs) == 0:
        return 0.0, (np.zeros_like(vertices) if grad else None)
    n = face_normals(vertices, faces)
    dots = np.sum(n[pairs[:, 0]] * n[pairs[:, 1]], axis=1)
    loss = float(np.mean(1.0 - dots))
    if not grad:
        return loss, None
    gn = np.zeros_like(n)
    np.add.at(gn, pairs[:, 0], -n[pairs[:, 1]] / len(pairs))
    np.add.at(gn, pairs[:, 1], -n[pairs[:, 0]] / len(pairs))
    return loss, face_normals_vjp(vertices, faces, gn)


def normal_loss(vertices: np.ndarray, faces: np.ndarray, views: ViewSet, grad: bool = True, renders=None):
    """1 - mean over views of the mean pixel cosine; returns (loss, vertex grad, active view count).

    A pixel contributes when it is covered by the mesh and the target normal is
    nonzero there. Views with no such pixel are skipped.
    """
    mesh = TriMesh(vertices, faces)
    total = 0.0
    g = np.zeros_like(vertices) if grad else None
    used = []
    for k, view in enumerate(views):
        r = renders[k] if renders is not None else render_normals_diff(mesh, view.camera)
        target = np.asarray(view.normal, dtype=np.float64)
        tlen = np.linalg.norm(target, axis=-1)
        m = r.covered & (tlen > 1e-8)
        count = int(m.sum())
        if count == 0:
            continue
        t_hat = np.zeros_like(target)
        t_hat[m] = target[m] / tlen[m][:, None]
        cos = np.sum(r.image[m] * t_hat[m], axis=1)
        used.append((r, t_hat, m, count, cos.mean()))
    if not used:
        return 0.0, g, 0
    for r, t_hat, m, count, mean_cos in used:
        total += mean_cos
        if grad:
            gi = np.zeros_like(t_hat)
            gi[m] = -t_hat[m] / (count * len(used))
            g += r.backward(gi)
    return 1.0 - total / len(used), g, len(used)


def refinement_loss(vertices: np.ndarray, faces: np.ndarray, views: ViewSet, w_consistency: float,
                    pairs: np.ndarray | None = None):
    """Total loss and vertex gradient with coverage frozen at ``vertices``."""
    ln, gn, active = normal_loss(vertices, faces, views)
    if active == 0:
        raise OptimizationError("no normal supervision: no view has covered pixels with target normals")
    lc, gc = consistency_loss(vertices, faces, pairs)
    return ln + w_consistency * lc, gn + w_consistency * gc, {"normal": ln, "consistency": lc}


@dataclass
class RefineResult:
    mesh: TriMesh
    history: list = field(default_factory=list)


def refine_with_normals(mesh: TriMesh, views: ViewSet, steps: int = 200, lr: float = 1e-3,
                        w_consistency: float = 0.1, return_history: bool = False):
    """Adam on vertex positions; pixel coverage is recomputed (and frozen) each step."""
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    if len(views) == 0 or any(v.normal is None for v in views):
        raise ParameterError("every view needs a normal image")
    views.validate()
    faces = mesh.faces
    params = {"v": mesh.vertices.astype(np.float64).copy()}
    pairs = edge_adjacent_face_pairs(faces)
    opt = Adam({"v": lr}, eps=1e-8)
    history = []
    for step in range(steps):
        loss, g, terms = refinement_loss(params["v"], faces, views, w_consistency, pairs)
        if not np.isfinite(loss) or not np.all(np.isfinite(g)):
            raise OptimizationError(f"non-finite refinement loss at step {step}")
        history.append(terms | {"total": loss})
        if step % 50 == 0:
            log.debug("refine step %d loss %.6f", step, loss)
        opt.step(params, {"v": g})
    out = TriMesh(params["v"], faces.copy(), None if mesh.face_labels is None else mesh.face_labels.copy())
    return RefineResult(out, history) if return_history else out
