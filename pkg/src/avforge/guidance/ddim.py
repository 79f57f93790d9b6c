"""Deterministic DDIM inversion, interval score matching gradients and SDEdit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError
from .oracles import ControlAdapter, GuidanceOracle, LatentCodec

DELTA_T = 50
CFG_SCALE = 7.5


@dataclass
class ControlMaps:
    """Conditioning images handed to a control adapter at every denoiser call."""

    adapter: ControlAdapter
    normal: np.ndarray  # [H, W, 3]
    segmentation: np.ndarray  # [H, W]

    def features(self, z, t, text):
        return self.adapter.control(z, t, text, self.normal, self.segmentation)


def _predict(oracle, z, t, text, control: ControlMaps | None):
    feats = control.features(z, t, text) if control is not None else None
    eps = oracle.predict_noise(z, t, text, feats)
    if eps.shape != z.shape:
        raise ParameterError(f"oracle returned shape {eps.shape} for latent {z.shape}")
    return eps


def ddim_move(z: np.ndarray, eps: np.ndarray, ab_from: float, ab_to: float) -> np.ndarray:
    """Move a latent between noise levels along the deterministic DDIM direction."""
    return np.sqrt(ab_to / ab_from) * (z - np.sqrt(1.0 - ab_from) * eps) + np.sqrt(1.0 - ab_to) * eps


def ddim_invert_path(oracle: GuidanceOracle, z0: np.ndarray, path) -> list[np.ndarray]:
    """Unconditional DDIM inversion visiting the increasing timesteps in ``path`` (starting at 0).

    Returns the latent at every path entry.
    """
    path = [int(p) for p in path]
    if not path or path[0] != 0 or any(b <= a for a, b in zip(path, path[1:])):
        raise ParameterError(f"inversion path must start at 0 and increase: {path}")
    sched = oracle.schedule
    z = np.array(z0, dtype=np.float64)
    states = [z]
    for tau, nxt in zip(path, path[1:]):
        eps = _predict(oracle, z, tau, None, None)
        z = ddim_move(z, eps, sched.alpha_bar(tau), sched.alpha_bar(nxt))
        states.append(z)
    return states


def ddim_invert(oracle: GuidanceOracle, z0: np.ndarray, t: int, step: int) -> np.ndarray:
    """Invert z0 to timestep t in equal hops of ``step``."""
    if step <= 0:
        raise ParameterError("step must be positive")
    if t < 0 or t >= oracle.schedule.T:
        raise ParameterError(f"t={t} outside [0, {oracle.schedule.T})")
    if t % step:
        raise ParameterError(f"t={t} is not reachable from 0 in hops of {step}")
    return ddim_invert_path(oracle, z0, range(0, t + 1, step))[-1]


def ism_path(t: int, delta_t: int) -> list[int]:
    """0, then hops of delta_t ending exactly at t, so that t - delta_t is on the path."""
    first = t % delta_t
    return [0] + [k for k in range(first if first else delta_t, t + 1, delta_t)]


def ism_latent_gradient(oracle: GuidanceOracle, z0: np.ndarray, t: int, text: str | None = "",
                        delta_t: int = DELTA_T, control: ControlMaps | None = None, omega: float = 1.0,
                        mode: str = "literal") -> np.ndarray:
    """omega * (eps(z_t, t, y, F_ctrl) - eps(z_t or z_s, s, null)), s = t - delta_t.

    ``mode="literal"`` evaluates the second term at z_t; ``mode="interval"``
    evaluates it at z_s on the inversion trajectory.
    """
    if t <= delta_t:
        raise ParameterError(f"interval score matching needs t > delta_T ({t} <= {delta_t})")
    if mode not in ("literal", "interval"):
        raise ParameterError(f"unknown mode {mode!r}")
    s = t - delta_t
    states = ddim_invert_path(oracle, z0, ism_path(t, delta_t))
    z_t, z_s = states[-1], states[-2]
    cond = _predict(oracle, z_t, t, text, control)
    uncond = _predict(oracle, z_t if mode == "literal" else z_s, s, None, None)
    return omega * (cond - uncond)


def ism_gradient(image: np.ndarray, oracle: GuidanceOracle, codec: LatentCodec, t: int, text: str | None = "",
                 delta_t: int = DELTA_T, control: ControlMaps | None = None, omega: float = 1.0,
                 mode: str = "literal") -> np.ndarray:
    """Gradient wrt the image; the inverted latent is treated as a constant."""
    z0 = codec.encode(image)
    g = ism_latent_gradient(oracle, z0, t, text, delta_t, control, omega, mode)
    return codec.encode_vjp(image, g)


def sdedit_noise(shape, seed: int) -> np.ndarray:
    """The standard-normal noise sdedit injects for ``seed``."""
    return np.random.default_rng(seed).standard_normal(shape)


def sdedit_timesteps(t_start: int, step: int) -> list[int]:
    """Denoising timesteps t_start, t_start - step, ... (> 0), then -1 for the clean end."""
    return list(range(t_start, 0, -step)) + [-1]


def sdedit(oracle: GuidanceOracle, codec: LatentCodec, image: np.ndarray, text: str | None = "",
           strength: float = 0.3, seed: int = 0, control: ControlMaps | None = None,
           cfg_scale: float = CFG_SCALE, step: int = DELTA_T) -> np.ndarray:
    """Noise the encoded image to t* = round(strength * (T - 1)) and denoise it deterministically.

    Strength 0 traverses no schedule and returns decode(encode(image)).
    """
    if not 0.0 <= strength <= 1.0:
        raise ParameterError(f"strength must be in [0, 1], got {strength}")
    if step <= 0:
        raise ParameterError("step must be positive")
    sched = oracle.schedule
    z0 = codec.encode(image)
    t_star = int(round(strength * (sched.T - 1)))
    if t_star == 0:
        return codec.decode(z0)
    ab = sched.alpha_bar(t_star)
    z = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * sdedit_noise(z0.shape, seed)
    steps = sdedit_timesteps(t_star, step)
    for tau, nxt in zip(steps, steps[1:]):
        eps_u = _predict(oracle, z, tau, None, control)
        if cfg_scale == 1.0:
            eps = _predict(oracle, z, tau, text, control)
        else:
            eps = eps_u + cfg_scale * (_predict(oracle, z, tau, text, control) - eps_u)
        z = ddim_move(z, eps, sched.alpha_bar(tau), sched.alpha_bar(nxt))
    return codec.decode(z)
