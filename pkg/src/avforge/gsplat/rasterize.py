"""Software EWA splatting with front-to-back alpha compositing, and its exact backward pass.

Each splat's world covariance R diag(s^2) R^T is pushed through the camera
rotation and the local affine approximation J of the perspective projection,
then dilated by ``DILATION`` pixels^2 on the diagonal. A splat contributes to a
pixel when the Mahalanobis distance squared of the pixel center is at most
``TRUNCATION`` (3 sigma). Per pixel, contributions are composited in order of
increasing view depth (stable: equal depths go by splat index).

Compositing treats alpha as a fourth color channel (splat value 1, background
value 0), which makes alpha = 1 - prod(1 - a_i) fall out of the same sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera import Camera
from ..errors import ParameterError
from ..geometry import quat_to_matrix, quat_to_matrix_vjp
from ..raster import _pixel_pairs
from .cloud import WorldSplats, sigmoid

DILATION = 0.3
TRUNCATION = 9.0


@dataclass
class RenderedImage:
    rgb: np.ndarray  # [H, W, 3]
    alpha: np.ndarray  # [H, W]


@dataclass
class _Projection:
    idx: np.ndarray  # [M] indices of splats in front of the near plane
    t: np.ndarray  # [M, 3] camera-space centers
    depth: np.ndarray  # [M]
    J: np.ndarray  # [M, 2, 3]
    R: np.ndarray  # [M, 3, 3] world rotation
    s2: np.ndarray  # [M, 3] squared scales
    cov3: np.ndarray  # [M, 3, 3] world covariance
    cov2: np.ndarray  # [M, 2, 2] dilated screen covariance
    conic: np.ndarray  # [M, 2, 2] inverse of cov2
    mean: np.ndarray  # [M, 2] pixel coordinates
    opacity: np.ndarray  # [M]


@dataclass
class _Fragments:
    """Splat/pixel pairs laid out as a padded [P, K] table in compositing order."""

    pixels: np.ndarray  # [P] flat pixel ids with at least one fragment
    slot_splat: np.ndarray  # [P, K] local splat index (into _Projection), -1 = padding
    dx: np.ndarray  # [P, K]
    dy: np.ndarray  # [P, K]
    gauss: np.ndarray  # [P, K]
    alpha: np.ndarray  # [P, K], 0 on padding
    trans: np.ndarray  # [P, K] transmittance in front of each slot
    final_trans: np.ndarray  # [P]


@dataclass
class RasterState:
    proj: _Projection
    frags: _Fragments
    color4: np.ndarray  # [P, K, 4]
    background4: np.ndarray  # [4]
    shape: tuple[int, int]


def _project(world: WorldSplats, camera: Camera) -> _Projection:
    W = camera.rotation
    t_all = world.position @ W.T + camera.translation
    depth_all = -t_all[:, 2]
    idx = np.nonzero(depth_all > camera.near)[0]
    t = t_all[idx]
    d = depth_all[idx]
    x, y = t[:, 0], t[:, 1]
    fx, fy = camera.fx, camera.fy
    J = np.zeros((len(idx), 2, 3))
    J[:, 0, 0] = fx / d
    J[:, 0, 2] = fx * x / d**2
    J[:, 1, 1] = -fy / d
    J[:, 1, 2] = -fy * y / d**2
    R = quat_to_matrix(world.rotation[idx]) if len(idx) else np.zeros((0, 3, 3))
    s2 = np.exp(2.0 * world.log_scale[idx])
    cov3 = np.einsum("nij,nj,nkj->nik", R, s2, R)
    M = J @ W
    cov2 = np.einsum("nij,njk,nlk->nil", M, cov3, M) + DILATION * np.eye(2)
    det = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1] * cov2[:, 1, 0]
    conic = np.empty_like(cov2)
    conic[:, 0, 0] = cov2[:, 1, 1] / det
    conic[:, 1, 1] = cov2[:, 0, 0] / det
    conic[:, 0, 1] = conic[:, 1, 0] = -cov2[:, 0, 1] / det
    mean = np.stack([camera.cx + fx * x / d, camera.cy - fy * y / d], axis=1)
    return _Projection(idx, t, d, J, R, s2, cov3, cov2, conic, mean, sigmoid(world.opacity_logit[idx]))


def _fragments(proj: _Projection, H: int, W: int) -> _Fragments:
    m = len(proj.idx)
    rx = np.sqrt(TRUNCATION * proj.cov2[:, 0, 0])
    ry = np.sqrt(TRUNCATION * proj.cov2[:, 1, 1])
    u, v = proj.mean[:, 0], proj.mean[:, 1]
    with np.errstate(invalid="ignore"):
        lo_x = np.clip(np.ceil(u - rx - 0.5), 0, W).astype(np.int64)
        hi_x = np.clip(np.floor(u + rx - 0.5), -1, W - 1).astype(np.int64)
        lo_y = np.clip(np.ceil(v - ry - 0.5), 0, H).astype(np.int64)
        hi_y = np.clip(np.floor(v + ry - 0.5), -1, H - 1).astype(np.int64)
    owner, rows, cols = _pixel_pairs(lo_x, hi_x, lo_y, hi_y) if m else (np.zeros(0, np.int64),) * 3
    dx = cols + 0.5 - u[owner]
    dy = rows + 0.5 - v[owner]
    q = proj.conic[owner]
    power = q[:, 0, 0] * dx * dx + 2.0 * q[:, 0, 1] * dx * dy + q[:, 1, 1] * dy * dy
    keep = power <= TRUNCATION
    owner, dx, dy, power = owner[keep], dx[keep], dy[keep], power[keep]
    pix = rows[keep] * W + cols[keep]

    rank = np.empty(m, dtype=np.int64)
    rank[np.argsort(proj.depth, kind="stable")] = np.arange(m)
    order = np.lexsort((rank[owner], pix))
    owner, dx, dy, power, pix = owner[order], dx[order], dy[order], power[order], pix[order]

    pixels, start, counts = np.unique(pix, return_index=True, return_counts=True)
    P = len(pixels)
    K = int(counts.max()) if P else 0
    row = np.repeat(np.arange(P), counts)
    slot = np.arange(len(pix)) - np.repeat(start, counts)

    slot_splat = np.full((P, K), -1, dtype=np.int64)
    tdx = np.zeros((P, K))
    tdy = np.zeros((P, K))
    gauss = np.zeros((P, K))
    alpha = np.zeros((P, K))
    g = np.exp(-0.5 * power)
    slot_splat[row, slot] = owner
    tdx[row, slot] = dx
    tdy[row, slot] = dy
    gauss[row, slot] = g
    alpha[row, slot] = proj.opacity[owner] * g
    keep_prod = np.cumprod(1.0 - alpha, axis=1)
    trans = np.ones((P, K))
    trans[:, 1:] = keep_prod[:, :-1]
    final = keep_prod[:, -1] if K else np.ones(P)
    return _Fragments(pixels, slot_splat, tdx, tdy, gauss, alpha, trans, final)


def _background4(background, dtype=np.float64) -> np.ndarray:
    bg = np.broadcast_to(np.asarray(background, dtype=dtype), (3,))
    return np.concatenate([bg, [0.0]])


def rasterize(world: WorldSplats, camera: Camera, background=(0.0, 0.0, 0.0),
              return_state: bool = False):
    """Render splats to a RenderedImage (and optionally the state needed by the backward pass)."""
    camera.validate()
    world.validate()
    H, W = camera.height, camera.width
    bg4 = _background4(background)
    proj = _project(world, camera)
    frags = _fragments(proj, H, W)

    color4 = np.zeros(frags.alpha.shape + (4,))
    real = frags.slot_splat >= 0
    color4[real, :3] = world.color[proj.idx[frags.slot_splat[real]]]
    color4[real, 3] = 1.0

    out = np.empty((H * W, 4))
    out[:] = bg4
    if len(frags.pixels):
        weights = frags.alpha * frags.trans
        out[frags.pixels] = np.einsum("pk,pkc->pc", weights, color4) + frags.final_trans[:, None] * bg4
    out = out.reshape(H, W, 4)
    image = RenderedImage(out[..., :3].copy(), out[..., 3].copy())
    if return_state:
        return image, RasterState(proj, frags, color4, bg4, (H, W))
    return image


def rasterize_backward(world: WorldSplats, camera: Camera, grad_rgb: np.ndarray,
                       grad_alpha: np.ndarray | None = None, background=(0.0, 0.0, 0.0),
                       state: RasterState | None = None) -> WorldSplats:
    """Gradients of sum(grad_rgb * rgb) + sum(grad_alpha * alpha) wrt every world splat parameter.

    Depth order and the set of (splat, pixel) pairs inside the truncation
    radius are held fixed. Returns a WorldSplats of gradients.
    """
    H, W = camera.height, camera.width
    grad_rgb = np.asarray(grad_rgb, dtype=np.float64)
    if grad_rgb.shape != (H, W, 3):
        raise ParameterError(f"grad_rgb has shape {grad_rgb.shape}, expected {(H, W, 3)}")
    if grad_alpha is not None:
        grad_alpha = np.asarray(grad_alpha, dtype=np.float64)
        if grad_alpha.shape != (H, W):
            raise ParameterError(f"grad_alpha has shape {grad_alpha.shape}, expected {(H, W)}")
    if state is None:
        _, state = rasterize(world, camera, background, return_state=True)
    proj, fr = state.proj, state.frags
    n = world.count
    out = WorldSplats(np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)), np.zeros(n), np.zeros((n, 3)))
    if len(fr.pixels) == 0:
        return out

    g4 = np.zeros((len(fr.pixels), 4))
    g4[:, :3] = grad_rgb.reshape(-1, 3)[fr.pixels]
    if grad_alpha is not None:
        g4[:, 3] = grad_alpha.reshape(-1)[fr.pixels]

    # Color behind each slot: R_k = c_{k+1} a_{k+1} + (1 - a_{k+1}) R_{k+1}, R_last = background.
    P, K = fr.alpha.shape
    behind = np.empty((P, K, 4))
    acc = np.broadcast_to(state.background4, (P, 4)).copy()
    for k in range(K - 1, -1, -1):
        behind[:, k] = acc
        a = fr.alpha[:, k, None]
        acc = state.color4[:, k] * a + (1.0 - a) * acc
    g_alpha = fr.trans * np.einsum("pc,pkc->pk", g4, state.color4 - behind)  # dL/da per slot
    g_color = (fr.alpha * fr.trans)[..., None] * g4[:, None, :3]  # dL/dc per slot

    real = fr.slot_splat >= 0
    sp = fr.slot_splat[real]
    m = len(proj.idx)
    ga = g_alpha[real]
    gauss = fr.gauss[real]
    dx, dy = fr.dx[real], fr.dy[real]
    op = proj.opacity[sp]

    def per_splat(values):
        return np.bincount(sp, weights=values, minlength=m)

    g_op = per_splat(ga * gauss)
    g_power = ga * op * gauss * -0.5
    q = proj.conic[sp]
    g_u = per_splat(-g_power * 2.0 * (q[:, 0, 0] * dx + q[:, 0, 1] * dy))
    g_v = per_splat(-g_power * 2.0 * (q[:, 0, 1] * dx + q[:, 1, 1] * dy))
    g_conic = np.empty((m, 2, 2))
    g_conic[:, 0, 0] = per_splat(g_power * dx * dx)
    g_conic[:, 0, 1] = g_conic[:, 1, 0] = per_splat(g_power * dx * dy)
    g_conic[:, 1, 1] = per_splat(g_power * dy * dy)
    g_col = np.stack([per_splat(g_color[..., c][real]) for c in range(3)], axis=1)

    # conic = cov2^-1 ; cov2 = M cov3 M^T + dilation ; M = J W
    Q = proj.conic
    g_cov2 = -Q @ g_conic @ Q
    Wc = camera.rotation
    M = proj.J @ Wc
    g_cov3 = np.einsum("nji,njk,nkl->nil", M, g_cov2, M)
    g_M = 2.0 * g_cov2 @ M @ proj.cov3
    g_J = g_M @ Wc.T

    d = proj.depth
    x, y = proj.t[:, 0], proj.t[:, 1]
    fx, fy = camera.fx, camera.fy
    g_t = np.einsum("nji,nj->ni", proj.J, np.stack([g_u, g_v], axis=1))
    g_t[:, 0] += g_J[:, 0, 2] * fx / d**2
    g_t[:, 1] += g_J[:, 1, 2] * -fy / d**2
    g_t[:, 2] += (g_J[:, 0, 0] * fx / d**2 + g_J[:, 0, 2] * 2.0 * fx * x / d**3
                  + g_J[:, 1, 1] * -fy / d**2 + g_J[:, 1, 2] * -2.0 * fy * y / d**3)

    # cov3 = R diag(s^2) R^T
    R, s2 = proj.R, proj.s2
    g_R = 2.0 * g_cov3 @ R * s2[:, None, :]
    g_logs = 2.0 * s2 * np.einsum("nji,njk,nki->ni", R, g_cov3, R)

    idx = proj.idx
    out.position[idx] = g_t @ Wc
    out.rotation[idx] = quat_to_matrix_vjp(world.rotation[idx], g_R)
    out.log_scale[idx] = g_logs
    out.opacity_logit[idx] = g_op * op_deriv(proj.opacity)
    out.color[idx] = g_col
    return out


def op_deriv(opacity: np.ndarray) -> np.ndarray:
    """d sigmoid / d logit expressed through the activated value."""
    return opacity * (1.0 - opacity)
