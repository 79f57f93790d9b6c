"""Perceptual image distance from fixed random convolution features at several scales.

A deterministic stand-in for learned perceptual metrics: each scale applies a
seeded 3x3 convolution bank with ReLU to an average-pooled copy of the image,
and the distance is the mean squared feature difference summed over scales.
"""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError


def _pool(x: np.ndarray) -> np.ndarray:
    H, W = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:H, :W]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def _pool_adjoint(g: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape)
    up = 0.25 * np.repeat(np.repeat(g, 2, axis=0), 2, axis=1)
    out[: up.shape[0], : up.shape[1]] = up
    return out


def _patches(x: np.ndarray) -> np.ndarray:
    """[H, W, C] -> [H*W, 9*C] zero-padded 3x3 neighbourhoods."""
    H, W, C = x.shape
    p = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    cols = [p[di : di + H, dj : dj + W] for di in range(3) for dj in range(3)]
    return np.concatenate(cols, axis=2).reshape(H * W, 9 * C)


def _patches_adjoint(g: np.ndarray, shape) -> np.ndarray:
    H, W, C = shape
    g = g.reshape(H, W, 9, C)
    p = np.zeros((H + 2, W + 2, C))
    k = 0
    for di in range(3):
        for dj in range(3):
            p[di : di + H, dj : dj + W] += g[:, :, k]
            k += 1
    return p[1:-1, 1:-1]


class RandomConvPerceptual:
    def __init__(self, channels: int = 8, scales: int = 3, seed: int = 0):
        if channels < 1 or scales < 1:
            raise ParameterError("channels and scales must be positive")
        rng = np.random.default_rng(seed)
        self.filters = [rng.standard_normal((27, channels)) / np.sqrt(27.0) for _ in range(scales)]

    def __call__(self, x: np.ndarray, y: np.ndarray, grad: bool = True):
        """(distance, d distance / d x)."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != y.shape or x.ndim != 3 or x.shape[2] != 3:
            raise ParameterError(f"perceptual distance needs two [H, W, 3] images, got {x.shape} and {y.shape}")
        xs, ys, total = [x], [y], 0.0
        for _ in range(len(self.filters) - 1):
            xs.append(_pool(xs[-1]))
            ys.append(_pool(ys[-1]))
        gx = [None] * len(self.filters)
        for s, Wt in enumerate(self.filters):
            if min(xs[s].shape[:2]) == 0:
                gx[s] = np.zeros_like(xs[s])
                continue
            px, py = _patches(xs[s]), _patches(ys[s])
            ax, ay = px @ Wt, py @ Wt
            diff = np.maximum(ax, 0) - np.maximum(ay, 0)  # [HW, C]
            total += float(np.mean(diff**2))
            if grad:
                g_act = 2.0 * diff / diff.size * (ax > 0)
                gx[s] = _patches_adjoint(g_act @ Wt.T, xs[s].shape)
        if not grad:
            return total, None
        g = gx[-1]
        for s in range(len(self.filters) - 2, -1, -1):
            g = gx[s] + _pool_adjoint(g, xs[s].shape)
        return total, g
