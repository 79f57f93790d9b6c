"""Rendering a rigged Gaussian avatar and chaining image gradients back to its cloud."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera import Camera
from ..gsplat.cloud import FaceFrames, GaussianCloud, WorldSplats, compute_face_frames, globalize, globalize_backward
from ..gsplat.rasterize import RasterState, RenderedImage, rasterize, rasterize_backward
from ..raster import rasterize_triangles
from ..rig.maps import render_normal_map, render_segmentation_map
from ..rig.model import BlendshapeRig, PosedMesh, RigParams, deform


@dataclass
class Avatar:
    rig: BlendshapeRig
    cloud: GaussianCloud

    def copy(self) -> "Avatar":
        return Avatar(self.rig, self.cloud.copy())


@dataclass
class Posed:
    """A deformed rig with its binding frames and the globalized splats."""

    mesh: PosedMesh
    frames: FaceFrames
    world: WorldSplats


@dataclass
class AvatarRender:
    image: RenderedImage
    camera: Camera
    state: RasterState
    background: np.ndarray


def pose_avatar(avatar: Avatar, params: RigParams) -> Posed:
    mesh = deform(avatar.rig, params)
    frames = compute_face_frames(mesh.vertices, mesh.faces)
    return Posed(mesh, frames, globalize(avatar.cloud, frames))


def render_posed(posed: Posed, camera: Camera, background=(0.0, 0.0, 0.0)) -> AvatarRender:
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,)).copy()
    image, state = rasterize(posed.world, camera, bg, return_state=True)
    return AvatarRender(image, camera, state, bg)


def backward_posed(avatar: Avatar, posed: Posed, render: AvatarRender, grad_rgb: np.ndarray,
                   grad_alpha: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Cloud-parameter gradients of sum(grad_rgb * rgb) (+ alpha term) for one render."""
    g_world = rasterize_backward(posed.world, render.camera, grad_rgb, grad_alpha, render.background, render.state)
    return globalize_backward(avatar.cloud, posed.frames, g_world)


def conditioning_maps(avatar: Avatar, posed: Posed, camera: Camera):
    """Camera-space normal map [H, W, 3] and partition label map [H, W] of the posed rig."""
    vis = rasterize_triangles(posed.mesh.vertices, posed.mesh.faces, camera)
    return (render_normal_map(posed.mesh, camera, vis),
            render_segmentation_map(posed.mesh, avatar.rig.face_partition, camera, vis))


def add_grads(total: dict | None, extra: dict) -> dict:
    if total is None:
        return {k: v.copy() for k, v in extra.items()}
    for k, v in extra.items():
        total[k] = total[k] + v if k in total else v.copy()
    return total
