"""Region crops (eye, mouth, face, full) of a posed avatar view.

A crop is a square window in the full image around the padded bounding box of
the region's projected rig vertices. It is realized either as a crop camera
(same pose, rescaled intrinsics; renders the window directly at the output
resolution) or by resampling already rendered full-frame images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..camera import Camera
from ..errors import ParameterError, RegionInvisible
from ..rig.model import LABEL_IDS

REGION_PARTITIONS = {
    "eye": ("eyeball_l", "eyeball_r", "eyelid_region"),
    "mouth": ("teeth_upper", "teeth_lower", "mouth_interior"),
    "face": ("face", "jaw", "eyeball_l", "eyeball_r", "eyelid_region", "teeth_upper", "teeth_lower",
             "mouth_interior"),
    "full": (),
}
MIN_CROP_PX = 8.0


@dataclass(frozen=True)
class RegionSpec:
    name: str
    partitions: tuple[str, ...] = ()
    padding: float = 0.3
    resolution: int = 64

    def __post_init__(self):
        if self.name not in REGION_PARTITIONS:
            raise ParameterError(f"unknown region {self.name!r}")
        if self.padding < 0:
            raise ParameterError("padding must be >= 0")
        if self.resolution <= 0:
            raise ParameterError("resolution must be positive")
        if not self.partitions:
            object.__setattr__(self, "partitions", REGION_PARTITIONS[self.name])

    @classmethod
    def named(cls, name: str, resolution: int = 64, padding: float = 0.3) -> "RegionSpec":
        return cls(name, REGION_PARTITIONS.get(name, ()), padding, resolution)


@dataclass(frozen=True)
class CropTransform:
    """Square window [x0, x0 + side] x [y0, y0 + side] of the full image, sampled at ``resolution``."""

    x0: float
    y0: float
    side: float
    resolution: int
    full_width: int
    full_height: int

    @property
    def scale(self) -> float:
        """Crop pixels per full-image pixel."""
        return self.resolution / self.side

    def to_full(self, uv: np.ndarray) -> np.ndarray:
        """Crop pixel coordinates -> full-image pixel coordinates."""
        return np.asarray(uv, dtype=np.float64) / self.scale + np.array([self.x0, self.y0])

    def to_crop(self, uv: np.ndarray) -> np.ndarray:
        return (np.asarray(uv, dtype=np.float64) - np.array([self.x0, self.y0])) * self.scale

    def camera(self, full: Camera) -> Camera:
        k = self.scale
        return Camera(full.fx * k, full.fy * k, (full.cx - self.x0) * k, (full.cy - self.y0) * k,
                      self.resolution, self.resolution, full.world_to_camera.copy(), full.near)

    def resample_matrix(self, order: int = 1) -> sp.csr_matrix:
        """Sparse [R*R, H*W] operator sampling the full image at crop pixel centers.

        order 1 is bilinear (zero outside the image), order 0 nearest.
        """
        R, H, W = self.resolution, self.full_height, self.full_width
        c = (np.arange(R) + 0.5) / self.scale
        xs = self.x0 + c - 0.5  # continuous index space of the full image
        ys = self.y0 + c - 0.5
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        gx, gy = gx.reshape(-1), gy.reshape(-1)
        rows_out = np.arange(R * R)
        if order == 0:
            ix = np.floor(gx + 0.5).astype(np.int64)
            iy = np.floor(gy + 0.5).astype(np.int64)
            ok = (ix >= 0) & (ix < W) & (iy >= 0) & (iy < H)
            return sp.csr_matrix((np.ones(ok.sum()), (rows_out[ok], iy[ok] * W + ix[ok])), shape=(R * R, H * W))
        x0 = np.floor(gx).astype(np.int64)
        y0 = np.floor(gy).astype(np.int64)
        fx, fy = gx - x0, gy - y0
        rows, cols, vals = [], [], []
        for dy, wy in ((0, 1 - fy), (1, fy)):
            for dx, wx in ((0, 1 - fx), (1, fx)):
                xx, yy = x0 + dx, y0 + dy
                ok = (xx >= 0) & (xx < W) & (yy >= 0) & (yy < H) & (wx * wy > 0)
                rows.append(rows_out[ok])
                cols.append(yy[ok] * W + xx[ok])
                vals.append((wx * wy)[ok])
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(R * R, H * W))

    def apply(self, image: np.ndarray, order: int = 1, fill=0.0) -> np.ndarray:
        """Resample a full image [H, W, ...] into the crop [R, R, ...]; outside pixels get ``fill``."""
        image = np.asarray(image)
        A = self.resample_matrix(order)
        flat = image.reshape(self.full_height * self.full_width, -1).astype(np.float64)
        out = A @ flat
        coverage = np.asarray(A.sum(axis=1)).reshape(-1, 1)
        out = out + (1.0 - coverage) * fill
        out = out.reshape((self.resolution, self.resolution) + image.shape[2:])
        return out.astype(image.dtype) if order == 0 else out

    def scatter(self, grad_crop: np.ndarray) -> np.ndarray:
        """Adjoint of ``apply(order=1)`` (fill 0): crop-space gradients -> full-image gradients."""
        g = np.asarray(grad_crop, dtype=np.float64)
        A = self.resample_matrix(1)
        out = A.T @ g.reshape(self.resolution * self.resolution, -1)
        return out.reshape((self.full_height, self.full_width) + g.shape[2:])


def identity_crop(camera: Camera) -> CropTransform:
    if camera.width != camera.height:
        raise ParameterError("the full region needs a square camera")
    return CropTransform(0.0, 0.0, float(camera.width), camera.width, camera.width, camera.height)


def region_vertices(mesh, face_partition: np.ndarray, partition_names, spec: RegionSpec) -> np.ndarray:
    ids = [list(partition_names).index(p) for p in spec.partitions if p in partition_names]
    faces = mesh.faces[np.isin(face_partition, ids)]
    return np.unique(faces.reshape(-1))


def region_box(mesh, face_partition, partition_names, camera: Camera, spec: RegionSpec,
               segmentation: np.ndarray | None = None) -> CropTransform:
    """Crop window for a region. Raises RegionInvisible when the region cannot be seen.

    The region is visible when at least one of its vertices projects in front of
    the camera inside the image and, if a full-frame ``segmentation`` map is
    given, at least one pixel carries one of the region's labels.
    """
    if spec.name == "full":
        c = identity_crop(camera)
        return CropTransform(c.x0, c.y0, c.side, spec.resolution, c.full_width, c.full_height)
    verts = region_vertices(mesh, face_partition, partition_names, spec)
    if len(verts) == 0:
        raise RegionInvisible(f"region {spec.name!r} has no faces")
    uv, depth = camera.project(mesh.vertices[verts])
    front = depth > camera.near
    inside = front & (uv[:, 0] >= 0) & (uv[:, 0] <= camera.width) & (uv[:, 1] >= 0) & (uv[:, 1] <= camera.height)
    if not np.any(inside):
        raise RegionInvisible(f"region {spec.name!r} projects outside the image")
    if segmentation is not None:
        labels = [LABEL_IDS[p] for p in spec.partitions if p in LABEL_IDS]
        if not np.any(np.isin(segmentation, labels)):
            raise RegionInvisible(f"region {spec.name!r} is fully occluded")
    uv = uv[front]
    lo, hi = uv.min(0), uv.max(0)
    center = 0.5 * (lo + hi)
    side = max(float(np.max(hi - lo)) * (1.0 + 2.0 * spec.padding), MIN_CROP_PX)
    return CropTransform(center[0] - side / 2, center[1] - side / 2, side, spec.resolution,
                         camera.width, camera.height)


def crop_region(image: np.ndarray, normal: np.ndarray, segmentation: np.ndarray, mesh, face_partition,
                partition_names, camera: Camera, spec: RegionSpec, background=0.0):
    """Crop full-frame render + conditioning maps to a region.

    Returns (I_r, N_r, S_r, transform). Images are resampled bilinearly, labels
    with nearest sampling; pixels outside the full frame become background.
    """
    tr = region_box(mesh, face_partition, partition_names, camera, spec, segmentation)
    return (tr.apply(image, 1, background), tr.apply(normal, 1, 0.0), tr.apply(segmentation, 0, 0), tr)
