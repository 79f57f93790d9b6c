"""Analytic mesh scenes shared by the mesh and acceptance tests."""

from __future__ import annotations

from collections import Counter

import numpy as np

from avforge.camera import orbit_camera
from avforge.mesh.primitives import icosphere
from avforge.mesh.types import DensityGrid, View, ViewSet
from oracles.sphere import sphere_normals


def sphere_grid(n=64, r=0.5):
    return DensityGrid.from_function(lambda p: np.linalg.norm(p, axis=-1) - r, [-1, -1, -1], [1, 1, 1], n)


def edge_counts(faces):
    return Counter(tuple(sorted(e)) for f in faces for e in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])))


def noisy_sphere(sub=3, sigma=0.02, seed=0):
    m = icosphere(sub)
    r = 1 + np.random.default_rng(seed).normal(scale=sigma, size=m.n_vertices)
    return m, m.with_vertices(m.vertices * r[:, None])


def rms_radial(v):
    return float(np.sqrt(np.mean((np.linalg.norm(v, axis=1) - 1.0) ** 2)))


def fd_check(f, x, g, rng, h=1e-4, trials=3):
    worst = 0.0
    for _ in range(trials):
        v = rng.normal(size=x.shape)
        fd = (f(x + h * v) - f(x - h * v)) / (2 * h)
        an = float(np.sum(g * v))
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return worst


def sphere_views(n=8, res=48):
    views = []
    for k in range(n):
        cam = orbit_camera(45 * k, 30 if k % 2 else -30, 3.0, width=res, height=res)
        views.append(View(cam, normal=sphere_normals(cam)))
    return ViewSet(views)


def masked_views(mesh, n, res, seed, face_all=False, hair_all=False):
    rng = np.random.default_rng(seed)
    views = []
    for k in range(n):
        cam = orbit_camera(360 * k / n + 10, 20 * (-1) ** k, 3.0, width=res, height=res)
        if hair_all:
            face, hair = np.zeros((res, res), bool), np.ones((res, res), bool)
        else:
            face = rng.random((res, res)) < 0.5
            hair = ~face & (rng.random((res, res)) < 0.7)
        views.append(View(cam, face_mask=face, hair_mask=hair))
    return ViewSet(views)
