"""The five optimization stages of the avatar pipeline.

Every stage copies the input avatar, draws all randomness from a generator
seeded by (config seed, stage), and returns the updated avatar together with
one metrics row per iteration. Splat bindings and rig topology never change.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..camera import Camera, orbit_camera
from ..errors import GuidanceTransportError, NumericError, ParameterError, RegionInvisible
from ..geometry import quat_from_axis_angle, quat_multiply
from ..gsplat.cloud import init_teeth_colors, reg_position, reg_scale
from ..guidance.bundle import Guidance
from ..mesh.types import ViewSet
from ..optim import Adam
from ..rig.model import LABEL_IDS, PARTITION_NAMES, RigParams, deform
from .avatar import (Avatar, Posed, add_grads, backward_posed, conditioning_maps, pose_avatar,
                     render_posed)
from .config import STAGE_NAMES, StageConfig
from .motion import MotionLibrary
from .perceptual import RandomConvPerceptual
from .regions import REGION_PARTITIONS, RegionSpec, region_box

log = logging.getLogger(__name__)

METRIC_FIELDS = ("stage", "iteration", "t", "image_loss", "reg_scale", "reg_position", "total", "regions", "probe")


@dataclass
class StageResult:
    avatar: Avatar
    metrics: list[dict] = field(default_factory=list)


def stage_rng(cfg: StageConfig) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, STAGE_NAMES.index(cfg.name)])


def avatar_target(avatar: Avatar) -> np.ndarray:
    """Orbit center: centroid of the head partitions in the template pose."""
    rig = avatar.rig
    ids = [PARTITION_NAMES.index(p) for p in ("face", "scalp") if p in PARTITION_NAMES]
    faces = rig.faces[np.isin(rig.face_partition, ids)]
    verts = rig.template_vertices[np.unique(faces)] if len(faces) else rig.template_vertices
    return verts.mean(axis=0)


def position_extent(avatar: Avatar) -> float:
    """Scene radius measured in face-scale units (the units of local positions)."""
    posed = deform(avatar.rig, RigParams.neutral(avatar.rig))
    v = posed.vertices
    radius = float(np.max(np.linalg.norm(v - v.mean(axis=0), axis=1)))
    e = v[avatar.rig.faces]
    scale = np.mean(np.linalg.norm(e - np.roll(e, 1, axis=1), axis=2))
    return radius / float(scale)


def sample_camera(rng: np.random.Generator, cfg: StageConfig, target) -> Camera:
    yaw = rng.uniform(*cfg.yaw_range)
    pitch = rng.uniform(*cfg.pitch_range)
    return orbit_camera(yaw, pitch, cfg.camera_radius, target, width=cfg.resolution, height=cfg.resolution)


def front_camera(avatar: Avatar, cfg: StageConfig) -> Camera:
    return orbit_camera(0.0, 0.0, cfg.camera_radius, avatar_target(avatar), width=cfg.resolution,
                        height=cfg.resolution)


class _Trainer:
    """Adam over the cloud parameters plus the stage regularizers."""

    def __init__(self, avatar: Avatar, cfg: StageConfig):
        self.avatar = avatar.copy()
        self.cfg = cfg
        lrs = dict(cfg.lrs)
        lrs["local_position"] = lrs.get("local_position", 0.0) * position_extent(self.avatar)
        self.opt = Adam(lrs, eps=1e-15)
        self.metrics: list[dict] = []

    @property
    def cloud(self):
        return self.avatar.cloud

    def step(self, iteration: int, grads: dict | None, image_loss: float, t: int = 0, regions=(),
             probe: Callable[[Avatar], float] | None = None) -> None:
        cfg, cloud = self.cfg, self.avatar.cloud
        if grads is None:
            grads = {k: np.zeros_like(v) for k, v in cloud.params().items()}
        rs, rp = 0.0, 0.0
        if cfg.regularize:
            rs, g_s = reg_scale(cloud, cfg.scale_reg_threshold, cfg.scale_reg_weight)
            rp, g_p = reg_position(cloud, cfg.position_reg_threshold, cfg.position_reg_weight)
            grads["log_scale"] = grads["log_scale"] + g_s
            grads["local_position"] = grads["local_position"] + g_p
        total = image_loss + rs + rp
        if not np.isfinite(total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NumericError(f"stage {cfg.name} iteration {iteration}: non-finite loss or gradient")
        params = cloud.params()
        self.opt.step(params, grads)
        cloud.set_params(params)
        cloud.renormalize()
        np.clip(cloud.color, 0.0, 1.0, out=cloud.color)
        row = {"stage": cfg.name, "iteration": iteration, "t": t, "image_loss": image_loss, "reg_scale": rs,
               "reg_position": rp, "total": total, "regions": "+".join(regions), "probe": ""}
        if probe is not None:
            row["probe"] = float(probe(self.avatar))
        self.metrics.append(row)
        if cfg.log_every and iteration % cfg.log_every == 0:
            log.debug("%s it %d t %d loss %.6g reg %.3g/%.3g", cfg.name, iteration, t, image_loss, rs, rp)

    def result(self) -> StageResult:
        return StageResult(self.avatar, self.metrics)


def _guidance_call(cfg: StageConfig, iteration: int, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except GuidanceTransportError as exc:
        raise GuidanceTransportError(f"stage {cfg.name} aborted at iteration {iteration}: {exc}") from exc


@dataclass
class RegionView:
    """A region rendered through its crop camera, with conditioning maps."""

    name: str
    posed: Posed
    render: object
    normal: np.ndarray
    segmentation: np.ndarray


def render_region(avatar: Avatar, posed: Posed, camera: Camera, region: str, resolution: int,
                  full_segmentation: np.ndarray | None = None, background=0.0) -> RegionView:
    """Render one region (eye, mouth, face or full). Raises RegionInvisible for hidden regions."""
    spec = RegionSpec.named(region, resolution)
    if region == "full":
        cam = camera if camera.width == resolution else camera.with_resolution(resolution, resolution)
    else:
        tr = region_box(posed.mesh, avatar.rig.face_partition, PARTITION_NAMES, camera, spec, full_segmentation)
        cam = tr.camera(camera)
    normal, seg = conditioning_maps(avatar, posed, cam)
    return RegionView(region, posed, render_posed(posed, cam, background), normal, seg)


def face_mask(segmentation: np.ndarray) -> np.ndarray:
    """Pixels showing face partitions; hair, scalp, body and background are excluded."""
    return np.isin(segmentation, [LABEL_IDS[p] for p in REGION_PARTITIONS["face"]])


class RegionProbe:
    """Fixed-view measurement of a region: mean squared distance of its crop to a target image."""

    def __init__(self, avatar: Avatar, region: str, target: np.ndarray, camera: Camera | None = None,
                 params: RigParams | None = None, resolution: int | None = None):
        self.region = region
        self.target = np.asarray(target, dtype=np.float64)
        self.resolution = resolution or self.target.shape[0]
        self.camera = camera or orbit_camera(0.0, 0.0, 3.2, avatar_target(avatar), width=64, height=64)
        self.params = params or RigParams.neutral(avatar.rig)

    def image(self, avatar: Avatar) -> np.ndarray:
        posed = pose_avatar(avatar, self.params)
        return render_region(avatar, posed, self.camera, self.region, self.resolution).render.image.rgb

    def __call__(self, avatar: Avatar) -> float:
        return float(np.mean((self.image(avatar) - self.target) ** 2))


# --- stages -------------------------------------------------------------------------------------------


def run_initialization(avatar: Avatar, views: ViewSet, cfg: StageConfig, background=0.0,
                       probe=None) -> StageResult:
    """L1 fit of the cloud to the views in the neutral pose (plus regularizers)."""
    if len(views) == 0:
        raise ParameterError("initialization needs at least one view")
    if any(v.rgb is None for v in views):
        raise ParameterError("initialization views need RGB images")
    tr = _Trainer(avatar, cfg)
    tr.avatar.cloud = init_teeth_colors(tr.cloud, avatar.rig.face_partition, PARTITION_NAMES)
    hidden = avatar.rig.face_partition[tr.cloud.binding] == PARTITION_NAMES.index("mouth_interior")
    params = RigParams.neutral(avatar.rig)
    for it in range(cfg.iterations):
        view = views[it % len(views)]
        posed = pose_avatar(tr.avatar, params)
        rend = render_posed(posed, view.camera, background)
        diff = rend.image.rgb - view.rgb
        loss = float(np.mean(np.abs(diff)))
        grads = backward_posed(tr.avatar, posed, rend, np.sign(diff) / diff.size)
        for g in grads.values():
            g[hidden] = 0.0
        tr.step(it, grads, loss, probe=probe)
    return tr.result()


def _gaze(rng: np.random.Generator, limit_deg: float) -> np.ndarray:
    yaw, pitch = np.radians(rng.uniform(-limit_deg, limit_deg, 2))
    q = quat_multiply(quat_from_axis_angle([0.0, 1.0, 0.0], yaw), quat_from_axis_angle([1.0, 0.0, 0.0], pitch))
    return np.tile(q, (2, 1))


def run_eye_pretrain(avatar: Avatar, guidance: Guidance, cfg: StageConfig, background=0.0,
                     probe=None) -> StageResult:
    """L2 between the eye crop and its SDEdit refinement, over random eyelid and gaze states."""
    tr, rng = _Trainer(avatar, cfg), stage_rng(cfg)
    strength = 0.9 if cfg.strength is None else cfg.strength
    target = avatar_target(avatar)
    neutral = RigParams.neutral(avatar.rig)
    for it in range(cfg.iterations):
        params = neutral.copy(eyelids=rng.uniform(0.0, 1.0, 2), eye_gaze=_gaze(rng, cfg.gaze_range))
        camera = sample_camera(rng, cfg, target)
        seed = int(rng.integers(2**31))
        posed = pose_avatar(tr.avatar, params)
        _, full_seg = conditioning_maps(tr.avatar, posed, camera)
        try:
            rv = render_region(tr.avatar, posed, camera, "eye", cfg.resolution, full_seg, background)
        except RegionInvisible:
            tr.step(it, None, 0.0, probe=probe)
            continue
        image = rv.render.image.rgb
        refined = _guidance_call(cfg, it, guidance.edit, image, strength, seed, rv.normal, rv.segmentation,
                                 cfg.cfg_scale)
        diff = image - refined
        loss = float(np.mean(diff**2))
        grads = backward_posed(tr.avatar, posed, rv.render, 2.0 * diff / diff.size)
        tr.step(it, grads, loss, regions=("eye",), probe=probe)
    return tr.result()


def run_mouth_pretrain(avatar: Avatar, guidance: Guidance, motions: MotionLibrary, cfg: StageConfig,
                       background=0.0, probe=None) -> StageResult:
    """ISM on the mouth crop of open-mouth frames, with control, t decreasing linearly."""
    if len(motions.mouth_open_indices()) == 0:
        raise ParameterError("mouth pre-training needs open-mouth motion frames")
    tr, rng = _Trainer(avatar, cfg), stage_rng(cfg)
    target = avatar_target(avatar)
    for it in range(cfg.iterations):
        frame = motions.sample(rng, mouth_open_only=True)
        camera = sample_camera(rng, cfg, target)
        t = cfg.timestep(it)
        posed = pose_avatar(tr.avatar, frame.params)
        _, full_seg = conditioning_maps(tr.avatar, posed, camera)
        try:
            rv = render_region(tr.avatar, posed, camera, "mouth", cfg.resolution, full_seg, background)
        except RegionInvisible:
            tr.step(it, None, 0.0, t, probe=probe)
            continue
        g_img = _guidance_call(cfg, it, guidance.ism, rv.render.image.rgb, t, rv.normal, rv.segmentation)
        grads = backward_posed(tr.avatar, posed, rv.render, g_img)
        tr.step(it, grads, float(np.mean(g_img**2)), t, ("mouth",), probe=probe)
    return tr.result()


def region_ism_gradients(avatar: Avatar, guidance: Guidance, params: RigParams, camera: Camera, t: int,
                         regions=("eye", "mouth", "face", "full"), resolution: int = 64, background=0.0):
    """Per-region cloud gradients of the summed multi-region ISM objective.

    Eye, mouth and face terms use control maps; the full-frame term does not.
    Regions that are not visible are skipped. Returns {region: grads}.
    """
    posed = pose_avatar(avatar, params)
    _, full_seg = conditioning_maps(avatar, posed, camera)
    out = {}
    for region in regions:
        try:
            rv = render_region(avatar, posed, camera, region, resolution,
                               None if region == "full" else full_seg, background)
        except RegionInvisible:
            continue
        if region == "full":
            g_img = guidance.ism(rv.render.image.rgb, t)
        else:
            g_img = guidance.ism(rv.render.image.rgb, t, rv.normal, rv.segmentation)
        out[region] = (backward_posed(avatar, posed, rv.render, g_img), float(np.mean(g_img**2)))
    return out


def run_full_optimization(avatar: Avatar, guidance: Guidance, motions: MotionLibrary, cfg: StageConfig,
                          background=0.0, probe=None) -> StageResult:
    """Sum of ISM terms over eye, mouth, face and full-frame renders of random frames and cameras."""
    motions.validate(avatar.rig)
    tr, rng = _Trainer(avatar, cfg), stage_rng(cfg)
    target = avatar_target(avatar)
    for it in range(cfg.iterations):
        frame = motions.sample(rng)
        camera = sample_camera(rng, cfg, target)
        t = cfg.timestep(it)
        per_region = _guidance_call(cfg, it, region_ism_gradients, tr.avatar, guidance, frame.params, camera, t,
                                    cfg.regions, cfg.resolution, background)
        grads = None
        for g, _ in per_region.values():
            grads = add_grads(grads, g)
        loss = float(sum(m for _, m in per_region.values()))
        tr.step(it, grads, loss, t, tuple(per_region), probe=probe)
    return tr.result()


def refinement_gradients(avatar: Avatar, guidance: Guidance, params: RigParams, camera: Camera, seed: int,
                         strength: float = 0.3, regions=("eye", "mouth", "face", "full"), resolution: int = 64,
                         perceptual: RandomConvPerceptual | None = None, perceptual_weight: float = 1.0,
                         background=0.0, cfg_scale: float | None = None):
    """Per-region cloud gradients of L1 + perceptual distance to each region's SDEdit refinement.

    The full-frame term only sees pixels of face partitions. Returns {region: (grads, loss)}.
    """
    perceptual = perceptual or RandomConvPerceptual()
    posed = pose_avatar(avatar, params)
    _, full_seg = conditioning_maps(avatar, posed, camera)
    out = {}
    for k, region in enumerate(regions):
        try:
            rv = render_region(avatar, posed, camera, region, resolution,
                               None if region == "full" else full_seg, background)
        except RegionInvisible:
            continue
        image = rv.render.image.rgb
        refined = guidance.edit(image, strength, seed + k, cfg_scale=cfg_scale)
        diff = image - refined
        p_loss, p_grad = perceptual(image, refined)
        loss = float(np.mean(np.abs(diff))) + perceptual_weight * p_loss
        g_img = np.sign(diff) / diff.size + perceptual_weight * p_grad
        if region == "full":
            g_img = g_img * face_mask(rv.segmentation)[..., None]
        out[region] = (backward_posed(avatar, posed, rv.render, g_img), loss)
    return out


def run_refinement(avatar: Avatar, guidance: Guidance, motions: MotionLibrary, cfg: StageConfig,
                   background=0.0, probe=None) -> StageResult:
    """Image-space refinement toward SDEdit outputs (no control), non-face pixels masked on the full frame."""
    motions.validate(avatar.rig)
    tr, rng = _Trainer(avatar, cfg), stage_rng(cfg)
    strength = 0.3 if cfg.strength is None else cfg.strength
    perceptual = RandomConvPerceptual(seed=cfg.seed)
    target = avatar_target(avatar)
    for it in range(cfg.iterations):
        frame = motions.sample(rng)
        camera = sample_camera(rng, cfg, target)
        seed = int(rng.integers(2**31 - 16))
        per_region = _guidance_call(cfg, it, refinement_gradients, tr.avatar, guidance, frame.params, camera, seed,
                                    strength, cfg.regions, cfg.resolution, perceptual, cfg.perceptual_weight,
                                    background, cfg.cfg_scale)
        grads = None
        for g, _ in per_region.values():
            grads = add_grads(grads, g)
        loss = float(sum(m for _, m in per_region.values()))
        tr.step(it, grads, loss, 0, tuple(per_region), probe=probe)
    return tr.result()
