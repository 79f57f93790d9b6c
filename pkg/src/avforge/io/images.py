"""PNG images (8-bit RGB and masks, 16-bit normals) and view-set directories.

Normals are encoded per channel as round((n + 1) / 2 * 65535); pixels whose
normal is zero are written as 0 and decoded back to zero.
"""

from __future__ import annotations

import io
import os

import numpy as np
import png

from ..camera import Camera
from ..errors import DataError
from ..mesh.types import View, ViewSet
from .container import atomic_write, read_bytes
from .formats import read_json, write_json


def _png_bytes(arr: np.ndarray, bitdepth: int, greyscale: bool) -> bytes:
    h, w = arr.shape[:2]
    planes = 1 if greyscale else 3
    writer = png.Writer(w, h, greyscale=greyscale, bitdepth=bitdepth)
    buf = io.BytesIO()
    writer.write(buf, arr.reshape(h, w * planes).tolist())
    return buf.getvalue()


def _png_read(path):
    try:
        w, h, rows, info = png.Reader(bytes=read_bytes(path)).read()
        arr = np.array([np.asarray(r) for r in rows])
    except png.Error as exc:
        raise DataError(f"{path}: bad PNG: {exc}") from exc
    planes = info["planes"]
    return arr.reshape(h, w, planes) if planes > 1 else arr.reshape(h, w), info


def write_rgb(path, rgb: np.ndarray) -> None:
    q = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    atomic_write(path, _png_bytes(q, 8, False))


def read_rgb(path) -> np.ndarray:
    arr, info = _png_read(path)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    arr = arr[..., :3].astype(np.float64)
    return arr / (2 ** info["bitdepth"] - 1)


def encode_normals(n: np.ndarray) -> np.ndarray:
    q = np.round((np.clip(n, -1.0, 1.0) + 1.0) / 2.0 * 65535.0).astype(np.uint16)
    q[np.all(n == 0, axis=-1)] = 0
    return q


def decode_normals(q: np.ndarray) -> np.ndarray:
    n = q.astype(np.float64) / 65535.0 * 2.0 - 1.0
    n[np.all(q == 0, axis=-1)] = 0.0
    return n


def write_normals(path, n: np.ndarray) -> None:
    atomic_write(path, _png_bytes(encode_normals(n), 16, False))


def read_normals(path) -> np.ndarray:
    arr, info = _png_read(path)
    if info["bitdepth"] != 16 or arr.ndim != 3:
        raise DataError(f"{path}: normal maps must be 16-bit RGB PNG")
    return decode_normals(arr[..., :3])


def write_mask(path, mask: np.ndarray) -> None:
    atomic_write(path, _png_bytes(np.asarray(mask).astype(bool).astype(np.uint8) * 255, 8, True))


def read_mask(path) -> np.ndarray:
    arr, _ = _png_read(path)
    return (arr if arr.ndim == 2 else arr[..., 0]) > 0


def write_labels(path, labels: np.ndarray) -> None:
    atomic_write(path, _png_bytes(np.asarray(labels, dtype=np.uint8), 8, True))


def read_labels(path) -> np.ndarray:
    arr, _ = _png_read(path)
    return (arr if arr.ndim == 2 else arr[..., 0]).astype(np.int64)


def write_viewset(directory, views: ViewSet) -> None:
    """``views.json`` with cameras and file names, plus PNGs per view."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for i, v in enumerate(views):
        e = {"camera": v.camera.to_json()}
        for key, img, writer in (("rgb", v.rgb, write_rgb), ("normal", v.normal, write_normals),
                                 ("face_mask", v.face_mask, write_mask), ("hair_mask", v.hair_mask, write_mask)):
            if img is not None:
                name = f"{key}_{i:03d}.png"
                writer(os.path.join(directory, name), img)
                e[key] = name
        entries.append(e)
    write_json(os.path.join(directory, "views.json"), {"version": 1, "views": entries})


def read_viewset(directory) -> ViewSet:
    meta = read_json(os.path.join(directory, "views.json"))
    if not isinstance(meta, dict) or meta.get("version") != 1:
        raise DataError(f"{directory}: unsupported view set version", field="version")
    readers = {"rgb": read_rgb, "normal": read_normals, "face_mask": read_mask, "hair_mask": read_mask}
    views = []
    for i, e in enumerate(meta.get("views", [])):
        try:
            cam = Camera.from_json(e["camera"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"view {i}: bad camera: {exc}", field=f"views[{i}].camera") from exc
        kw = {k: readers[k](os.path.join(directory, e[k])) for k in readers if k in e}
        views.append(View(cam, **kw))
    return ViewSet(views).validate()
