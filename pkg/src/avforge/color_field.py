"""Multiresolution hash-grid color field.

Each level hashes the 8 corners of the cell containing a point into a table of
feature vectors and trilinearly blends them; features of all levels are
concatenated and mapped to RGB by a linear head, then clamped to [0, 1].
Fitting renders the (fixed) mesh from every view, looks up the color at each
pixel's surface hit point, and runs Adam on tables and head against the view
images.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import OptimizationError, ParameterError
from .optim import Adam
from .raster import rasterize_triangles

log = logging.getLogger(__name__)

ADAM_EPS = 1e-8

PRIMES = np.array([1, 2654435761, 805459861], dtype=np.uint64)
_CORNERS = np.array([[i, j, k] for k in (0, 1) for j in (0, 1) for i in (0, 1)], dtype=np.int64)  # [8, 3]


def level_resolutions(levels: int, base: int, max_res: int) -> np.ndarray:
    """Geometric progression from ``base`` to ``max_res``, rounded to integers."""
    if levels == 1:
        return np.array([base], dtype=np.int64)
    growth = np.exp((np.log(max_res) - np.log(base)) / (levels - 1))
    return np.round(base * growth ** np.arange(levels)).astype(np.int64)


def spatial_hash(coords: np.ndarray, table_size: int) -> np.ndarray:
    """XOR of coordinate-wise prime products, modulo ``table_size``. coords [..., 3] int."""
    c = coords.astype(np.uint64)
    h = (c[..., 0] * PRIMES[0]) ^ (c[..., 1] * PRIMES[1]) ^ (c[..., 2] * PRIMES[2])
    return (h % np.uint64(table_size)).astype(np.int64)


@dataclass
class HashGridField:
    levels: int = 12
    base_resolution: int = 16
    max_resolution: int = 256
    features_per_level: int = 2
    table_size: int = 2**16
    tables: np.ndarray | None = None  # [L, T, F]
    head_weight: np.ndarray | None = None  # [3, L*F]
    head_bias: np.ndarray | None = None  # [3]
    bounds: np.ndarray = field(default_factory=lambda: np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]))

    def __post_init__(self):
        if self.table_size <= 0 or self.table_size & (self.table_size - 1):
            raise ParameterError(f"table_size must be a power of two, got {self.table_size}")
        if self.levels < 1 or self.base_resolution < 1 or self.max_resolution < self.base_resolution:
            raise ParameterError("need levels >= 1 and 1 <= base_resolution <= max_resolution")
        L, T, F = self.levels, self.table_size, self.features_per_level
        if self.tables is None:
            self.tables = np.zeros((L, T, F))
        if self.head_weight is None:
            self.head_weight = np.zeros((3, L * F))
        if self.head_bias is None:
            self.head_bias = np.zeros(3)
        self.tables = np.asarray(self.tables, dtype=np.float64).reshape(L, T, F)
        self.head_weight = np.asarray(self.head_weight, dtype=np.float64).reshape(3, L * F)
        self.head_bias = np.asarray(self.head_bias, dtype=np.float64).reshape(3)
        self.bounds = np.asarray(self.bounds, dtype=np.float64).reshape(2, 3)

    @classmethod
    def initialize(cls, seed: int = 0, **kwargs) -> "HashGridField":
        """Tables uniform in [-1e-4, 1e-4]; head weights uniform in +-1/sqrt(L*F); bias 0.5."""
        f = cls(**kwargs)
        rng = np.random.default_rng(seed)
        f.tables = rng.uniform(-1e-4, 1e-4, size=f.tables.shape)
        bound = 1.0 / np.sqrt(f.feature_dim)
        f.head_weight = rng.uniform(-bound, bound, size=f.head_weight.shape)
        f.head_bias = np.full(3, 0.5)
        return f

    @property
    def resolutions(self) -> np.ndarray:
        return level_resolutions(self.levels, self.base_resolution, self.max_resolution)

    @property
    def feature_dim(self) -> int:
        return self.levels * self.features_per_level

    def copy(self) -> "HashGridField":
        return HashGridField(self.levels, self.base_resolution, self.max_resolution, self.features_per_level,
                             self.table_size, self.tables.copy(), self.head_weight.copy(),
                             self.head_bias.copy(), self.bounds.copy())

    def normalize(self, points: np.ndarray) -> np.ndarray:
        """Map world points into the unit cube spanned by ``bounds``."""
        lo, hi = self.bounds
        return (np.asarray(points, dtype=np.float64) - lo) / np.where(hi > lo, hi - lo, 1.0)


def _check_unit(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != 3:
        raise ParameterError(f"points must have 3 coordinates, got shape {p.shape}")
    bad = ~np.all((p >= 0.0) & (p <= 1.0), axis=-1)
    if np.any(bad):
        i = int(np.flatnonzero(bad.reshape(-1))[0])
        raise ParameterError(f"point {i} lies outside the unit cube: {p.reshape(-1, 3)[i].tolist()}")
    return p


def corner_lookup(fld: HashGridField, p: np.ndarray):
    """Flat table indices [N, L, 8] (into tables.reshape(L*T, F)) and trilinear weights [N, L, 8]."""
    p = _check_unit(p).reshape(-1, 3)
    res = fld.resolutions
    idx = np.empty((len(p), fld.levels, 8), dtype=np.int64)
    wts = np.empty((len(p), fld.levels, 8))
    for level, n in enumerate(res):
        x = p * n
        cell = np.minimum(np.floor(x).astype(np.int64), n - 1)
        frac = x - cell  # [N, 3]
        corners = cell[:, None, :] + _CORNERS[None]  # [N, 8, 3]
        idx[:, level] = spatial_hash(corners, fld.table_size) + level * fld.table_size
        w = np.where(_CORNERS[None] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
        wts[:, level] = w.prod(-1)
    return idx, wts


def encode(fld: HashGridField, p: np.ndarray) -> np.ndarray:
    """Concatenated per-level features [..., L*F] for points in the unit cube."""
    p = np.asarray(p, dtype=np.float64)
    idx, wts = corner_lookup(fld, p)
    flat = fld.tables.reshape(-1, fld.features_per_level)
    feats = np.einsum("nlc,nlcf->nlf", wts, flat[idx])
    return feats.reshape(p.shape[:-1] + (fld.feature_dim,))


def query_color(fld: HashGridField, p: np.ndarray) -> np.ndarray:
    """RGB in [0, 1] for points in the unit cube."""
    return np.clip(encode(fld, p) @ fld.head_weight.T + fld.head_bias, 0.0, 1.0)


def query_world(fld: HashGridField, points: np.ndarray) -> np.ndarray:
    """RGB for world-space points, normalized by the field bounds and clipped into the cube."""
    return query_color(fld, np.clip(fld.normalize(points), 0.0, 1.0))


class _Interp:
    """Sparse trilinear interpolation operator for a fixed point set.

    Columns are restricted to the table rows the points actually touch, ordered
    by first use so neighboring points read neighboring memory.
    """

    def __init__(self, fld: HashGridField, p: np.ndarray):
        idx, wts = corner_lookup(fld, p)
        n, L = idx.shape[:2]
        flat = idx.reshape(-1)
        uniq, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        self.touched = uniq[order]  # flat table rows, in column order
        cols = rank[inverse.reshape(-1)]
        # level-major rows (level * n + point): consecutive rows read the same level's table
        rows = np.repeat((np.arange(L)[None, :] * n + np.arange(n)[:, None]).reshape(-1), 8)
        self.n, self.L = n, L
        self.A = sp.csr_matrix((wts.reshape(-1), (rows, cols)), shape=(n * L, len(self.touched)))
        self.A.sort_indices()
        self.At = self.A.T.tocsr()

    def gather(self, tables: np.ndarray) -> np.ndarray:
        """Touched table rows [K, F]."""
        return tables.reshape(-1, tables.shape[-1])[self.touched]

    def scatter(self, tables: np.ndarray, rows: np.ndarray) -> np.ndarray:
        out = tables.copy()
        out.reshape(-1, tables.shape[-1])[self.touched] = rows
        return out

    def features(self, rows: np.ndarray) -> np.ndarray:
        """[n, L*F] from touched rows [K, F]."""
        out = (self.A @ rows).reshape(self.L, self.n, -1)
        return out.transpose(1, 0, 2).reshape(self.n, -1)

    def row_grad(self, grad_feat: np.ndarray) -> np.ndarray:
        """Gradient wrt touched rows [K, F]."""
        g = grad_feat.reshape(self.n, self.L, -1).transpose(1, 0, 2).reshape(self.n * self.L, -1)
        return np.asarray(self.At @ g)


def mesh_bounds(vertices: np.ndarray, margin: float = 0.02) -> np.ndarray:
    lo, hi = vertices.min(0), vertices.max(0)
    pad = margin * np.max(hi - lo)
    return np.stack([lo - pad, hi + pad])


def render_field(fld: HashGridField, mesh, camera, background=0.0) -> np.ndarray:
    """Textured-mesh render [H, W, 3]: nearest-face hit point -> field color."""
    vis = rasterize_triangles(mesh.vertices, mesh.faces, camera)
    img = np.empty(vis.face_id.shape + (3,))
    img[...] = background
    m = vis.covered
    if np.any(m):
        img[m] = query_world(fld, vis.hit_points(mesh.vertices, mesh.faces)[m])
    return img


@dataclass
class FitProblem:
    """Precomputed pixel hit points and targets for fitting a field to views."""

    interp: _Interp
    target: np.ndarray  # [P, 3]

    def loss_and_grads(self, rows: np.ndarray, weight: np.ndarray, bias: np.ndarray):
        """MSE and gradients wrt touched table rows, head weight and head bias."""
        feats = self.interp.features(rows)  # [P, L*F]
        raw = feats @ weight.T + bias
        rgb = np.clip(raw, 0.0, 1.0)
        diff = rgb - self.target
        loss = float(np.mean(diff**2))
        g_raw = (2.0 * diff / diff.size) * ((raw >= 0.0) & (raw <= 1.0))
        return loss, {"rows": self.interp.row_grad(g_raw @ weight),
                      "head_weight": g_raw.T @ feats, "head_bias": g_raw.sum(0)}

    def loss(self, fld: HashGridField) -> float:
        return self.loss_and_grads(self.interp.gather(fld.tables), fld.head_weight, fld.head_bias)[0]

    def table_gradient(self, fld: HashGridField) -> np.ndarray:
        """Full-size gradient wrt ``fld.tables`` (zero on untouched rows)."""
        _, g = self.loss_and_grads(self.interp.gather(fld.tables), fld.head_weight, fld.head_bias)
        return self.interp.scatter(np.zeros_like(fld.tables), g["rows"])


def build_fit_problem(fld: HashGridField, mesh, views) -> FitProblem:
    pts, tgt = [], []
    for i, view in enumerate(views):
        if view.rgb is None:
            raise ParameterError(f"view {i} has no RGB image")
        vis = rasterize_triangles(mesh.vertices, mesh.faces, view.camera)
        m = vis.covered
        pts.append(vis.hit_points(mesh.vertices, mesh.faces)[m])
        tgt.append(np.asarray(view.rgb, dtype=np.float64)[m])
    pts = np.concatenate(pts) if pts else np.zeros((0, 3))
    if len(pts) == 0:
        raise OptimizationError("no coverage: the mesh covers no pixel in any view")
    p = np.clip(fld.normalize(pts), 0.0, 1.0)
    return FitProblem(_Interp(fld, p), np.concatenate(tgt))


def fit(fld: HashGridField, mesh, views, lr: float = 0.01, steps: int = 600, set_bounds: bool = True,
        eps: float = ADAM_EPS, return_history: bool = False):
    """Adam on tables and head; the mesh and views are left untouched.

    With ``set_bounds`` the field's normalization box is reset to the padded
    mesh bounding box before fitting. Table rows no pixel touches get zero
    gradient forever, so Adam never moves them; only touched rows are stepped.
    """
    out = fld.copy()
    if set_bounds:
        out.bounds = mesh_bounds(np.asarray(mesh.vertices, dtype=np.float64))
    problem = build_fit_problem(out, mesh, views)
    params = {"rows": problem.interp.gather(out.tables), "head_weight": out.head_weight,
              "head_bias": out.head_bias}
    opt = Adam(lr, eps=eps)
    history = []
    for step in range(steps):
        loss, grads = problem.loss_and_grads(params["rows"], params["head_weight"], params["head_bias"])
        if not np.isfinite(loss):
            raise OptimizationError(f"non-finite field loss at step {step}")
        history.append(loss)
        if step % 100 == 0:
            log.debug("field fit step %d mse %.3e", step, loss)
        opt.step(params, grads)
    out.tables = problem.interp.scatter(out.tables, params["rows"])
    out.head_weight, out.head_bias = params["head_weight"], params["head_bias"]
    if return_history:
        history.append(problem.loss(out))
        return out, history
    return out
