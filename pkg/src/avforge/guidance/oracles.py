"""Denoiser oracles, control adapters and latent codecs.

An oracle predicts the noise in a latent at an integer timestep. ``text=None``
selects the unconditional branch. ``control`` is an optional feature array
(already computed by a control adapter) shaped like the latent.
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np

from ..errors import ParameterError
from .schedule import NoiseSchedule


@runtime_checkable
class GuidanceOracle(Protocol):
    schedule: NoiseSchedule
    reentrant: bool

    def predict_noise(self, z: np.ndarray, t: int, text: str | None = None,
                      control: np.ndarray | None = None) -> np.ndarray: ...


@runtime_checkable
class ControlAdapter(Protocol):
    def control(self, z: np.ndarray, t: int, text: str | None, normal: np.ndarray,
                segmentation: np.ndarray) -> np.ndarray: ...


@runtime_checkable
class LatentCodec(Protocol):
    def encode(self, image: np.ndarray) -> np.ndarray: ...

    def decode(self, z: np.ndarray) -> np.ndarray: ...

    def encode_vjp(self, image: np.ndarray, grad_z: np.ndarray) -> np.ndarray: ...


def _per_step(value, T: int) -> np.ndarray:
    v = np.asarray(value(np.arange(T)) if callable(value) else value, dtype=np.float64)
    return np.broadcast_to(v, (T,)).copy()


class AffineOracle:
    """eps(z, t) = a_t * z + b_t (+ control_gain * control), separate conditional/unconditional coefficients.

    Coefficients may be scalars, length-T arrays or callables of the timestep array.
    Unconditional coefficients default to the conditional ones.
    """

    reentrant = True

    def __init__(self, a=0.0, b=0.0, a_uncond=None, b_uncond=None, schedule: NoiseSchedule | None = None,
                 control_gain: float = 0.0):
        self.schedule = schedule or NoiseSchedule.linear()
        T = self.schedule.T
        self.a = _per_step(a, T)
        self.b = _per_step(b, T)
        self.a_uncond = self.a if a_uncond is None else _per_step(a_uncond, T)
        self.b_uncond = self.b if b_uncond is None else _per_step(b_uncond, T)
        self.control_gain = float(control_gain)

    def predict_noise(self, z, t, text=None, control=None):
        z = np.asarray(z, dtype=np.float64)
        self.schedule.alpha_bar(t)
        a, b = (self.a, self.b) if text is not None else (self.a_uncond, self.b_uncond)
        out = a[t] * z + b[t]
        if control is not None and self.control_gain:
            out = out + self.control_gain * control
        return out


class TargetImageOracle:
    """Exact denoiser for data distributed N(z*, spread^2 I) around a target latent z*.

    The implied clean estimate is
        x0 = z* + k_t (z - sqrt(ab_t) z*),  k_t = sqrt(ab_t) spread^2 / (ab_t spread^2 + 1 - ab_t)
    and eps = (z - sqrt(ab_t) x0) / sqrt(1 - ab_t). With spread = 0 this is
    eps = (z - sqrt(ab_t) z*) / sqrt(1 - ab_t), a pure pull toward z*.

    The unconditional branch is either the same denoiser (``"target"``) or the
    zero predictor (``"zero"``).
    """

    reentrant = True

    def __init__(self, target: np.ndarray, schedule: NoiseSchedule | None = None, spread: float = 0.0,
                 unconditional: str = "zero", control_gain: float = 0.0):
        if unconditional not in ("zero", "target"):
            raise ParameterError(f"unconditional must be 'zero' or 'target', got {unconditional!r}")
        if spread < 0:
            raise ParameterError("spread must be >= 0")
        self.target = np.asarray(target, dtype=np.float64)
        self.schedule = schedule or NoiseSchedule.linear()
        self.spread = float(spread)
        self.unconditional = unconditional
        self.control_gain = float(control_gain)

    def clean_estimate(self, z: np.ndarray, t: int) -> np.ndarray:
        ab = self.schedule.alpha_bar(t)
        s2 = self.spread**2
        k = np.sqrt(ab) * s2 / (ab * s2 + 1.0 - ab)
        return self.target + k * (z - np.sqrt(ab) * self.target)

    def predict_noise(self, z, t, text=None, control=None):
        z = np.asarray(z, dtype=np.float64)
        if z.shape != self.target.shape:
            raise ParameterError(f"latent shape {z.shape} does not match target {self.target.shape}")
        if text is None and self.unconditional == "zero":
            out = np.zeros_like(z)
            self.schedule.alpha_bar(t)
        else:
            ab = self.schedule.alpha_bar(t)
            out = (z - np.sqrt(ab) * self.clean_estimate(z, t)) / np.sqrt(1.0 - ab)
        if control is not None and self.control_gain:
            out = out + self.control_gain * control
        return out


def _area_resize(image: np.ndarray, shape) -> np.ndarray:
    """Resize [H, W, C] to [h, w, C] by box averaging (integer factors) or nearest sampling."""
    H, W = image.shape[:2]
    h, w = shape
    if H % h == 0 and W % w == 0:
        fy, fx = H // h, W // w
        return image.reshape(h, fy, w, fx, -1).mean(axis=(1, 3))
    rows = np.minimum(((np.arange(h) + 0.5) * H / h).astype(int), H - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * W / w).astype(int), W - 1)
    return image[rows][:, cols]


class MapControlAdapter:
    """Deterministic control features: the normal map and a label embedding resized to the latent grid.

    features = normal_weight * N + label_weight * embed(S), channel-matched to the latent.
    """

    def __init__(self, normal_weight: float = 1.0, label_weight: float = 0.1, n_labels: int = 16, seed: int = 0):
        self.normal_weight = float(normal_weight)
        self.label_weight = float(label_weight)
        self.embedding = np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n_labels, 3))
        self.embedding[0] = 0.0

    def control(self, z, t, text, normal, segmentation):
        z = np.asarray(z)
        seg = np.clip(np.asarray(segmentation, dtype=np.int64), 0, len(self.embedding) - 1)
        maps = self.normal_weight * np.asarray(normal, dtype=np.float64) + self.label_weight * self.embedding[seg]
        feats = _area_resize(maps, z.shape[:2])
        c = z.shape[2] if z.ndim == 3 else 1
        if feats.shape[2] != c:
            feats = np.resize(feats.transpose(2, 0, 1), (c,) + feats.shape[:2]).transpose(1, 2, 0)
        return feats.reshape(z.shape)


class IdentityCodec:
    """Latent = image. Exact round trip. ``shape=None`` accepts any shape."""

    def __init__(self, shape=(64, 64, 3)):
        self.shape = None if shape is None else tuple(shape)

    def _check(self, image):
        image = np.asarray(image, dtype=np.float64)
        if self.shape is not None and image.shape != self.shape:
            raise ParameterError(f"codec expects images of shape {self.shape}, got {image.shape}")
        return image

    def encode(self, image):
        return self._check(image).copy()

    def decode(self, z):
        return self._check(z).copy()

    def encode_vjp(self, image, grad_z):
        return np.array(grad_z, dtype=np.float64).reshape(np.shape(image))


class AvgPoolCodec:
    """Latent = image averaged over ``factor`` x ``factor`` blocks; decode repeats pixels."""

    def __init__(self, shape=(64, 64, 3), factor: int = 4):
        H, W, C = shape
        if H % factor or W % factor:
            raise ParameterError("image size must be divisible by the pooling factor")
        self.shape = tuple(shape)
        self.factor = factor
        self.latent_shape = (H // factor, W // factor, C)

    def encode(self, image):
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.shape:
            raise ParameterError(f"codec expects images of shape {self.shape}, got {image.shape}")
        return _area_resize(image, self.latent_shape[:2])

    def decode(self, z):
        z = np.asarray(z, dtype=np.float64).reshape(self.latent_shape)
        return np.repeat(np.repeat(z, self.factor, axis=0), self.factor, axis=1)

    def encode_vjp(self, image, grad_z):
        g = np.asarray(grad_z, dtype=np.float64).reshape(self.latent_shape)
        return self.decode(g) / self.factor**2
