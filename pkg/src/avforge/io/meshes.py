"""Triangle mesh files: binary little-endian PLY and Wavefront OBJ."""

from __future__ import annotations

import io
import os

import numpy as np

from ..errors import DataError
from ..mesh.types import TriMesh
from .container import atomic_write, read_bytes


def ply_bytes(mesh: TriMesh) -> bytes:
    V, F = mesh.n_vertices, mesh.n_faces
    labels = mesh.face_labels is not None
    head = ["ply", "format binary_little_endian 1.0", f"element vertex {V}", "property float x",
            "property float y", "property float z", f"element face {F}", "property list uchar int vertex_indices"]
    if labels:
        head.append("property int label")
    head.append("end_header")
    verts = np.ascontiguousarray(mesh.vertices, dtype="<f4").tobytes()
    fdt = [("n", "u1"), ("idx", "<i4", (3,))] + ([("label", "<i4")] if labels else [])
    face_rec = np.zeros(F, dtype=fdt)
    face_rec["n"] = 3
    face_rec["idx"] = mesh.faces
    if labels:
        face_rec["label"] = mesh.face_labels
    return ("\n".join(head) + "\n").encode("ascii") + verts + face_rec.tobytes()


def parse_ply(data: bytes) -> TriMesh:
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise DataError("not a PLY file", offset=0, field="magic")
    lines = data[:end].decode("ascii", "replace").splitlines()
    if "format binary_little_endian 1.0" not in lines:
        raise DataError("only binary little-endian PLY is supported", offset=4, field="format")
    elements, current = [], None
    for line in lines[1:]:
        parts = line.split()
        if parts[:1] == ["element"]:
            current = [parts[1], int(parts[2]), []]
            elements.append(current)
        elif parts[:1] == ["property"] and current is not None:
            current[2].append(parts[1:])
    off = end + len(b"end_header\n")
    sizes = {"char": "i1", "uchar": "u1", "short": "<i2", "ushort": "<u2", "int": "<i4", "uint": "<u4",
             "float": "<f4", "double": "<f8", "int32": "<i4", "uint8": "u1", "float32": "<f4"}
    verts = faces = labels = None
    for name, count, props in elements:
        if name == "face":
            lst = props[0]
            if lst[0] != "list" or lst[1] not in sizes or lst[2] not in sizes:
                raise DataError("face element must start with a vertex index list", field="face")
            fdt = [("n", sizes[lst[1]]), ("idx", sizes[lst[2]], (3,))] + [(p[1], sizes[p[0]]) for p in props[1:]]
        else:
            if any(p[0] == "list" for p in props):
                raise DataError(f"list property in element {name!r} is unsupported", field=name)
            fdt = [(p[1], sizes[p[0]]) for p in props]
        dt = np.dtype(fdt)
        need = dt.itemsize * count
        if off + need > len(data):
            raise DataError(f"element {name!r} truncated", offset=len(data), field=name)
        rec = np.frombuffer(data, dtype=dt, count=count, offset=off)
        off += need
        if name == "vertex":
            verts = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
        elif name == "face":
            if count and np.any(rec["n"] != 3):
                raise DataError("only triangle faces are supported", field="face")
            faces = rec["idx"].astype(np.int64)
            if "label" in rec.dtype.names:
                labels = rec["label"].astype(np.int64)
    if verts is None or faces is None:
        raise DataError("PLY needs vertex and face elements", field="element")
    mesh = TriMesh(verts, faces, labels)
    if len(faces) and (faces.min() < 0 or faces.max() >= len(verts)):
        raise DataError("face index out of range", field="face")
    return mesh


def obj_text(mesh: TriMesh) -> str:
    buf = io.StringIO()
    for v in mesh.vertices:
        buf.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
    for f in mesh.faces + 1:
        buf.write(f"f {f[0]} {f[1]} {f[2]}\n")
    return buf.getvalue()


def parse_obj(text: str) -> TriMesh:
    verts, faces = [], []
    for n, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):  # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
        except ValueError as exc:
            raise DataError(f"OBJ line {n}: {exc}", field=f"line {n}") from exc
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) and (faces.min() < 0 or faces.max() >= len(verts)):
        raise DataError("face index out of range", field="f")
    return TriMesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3), faces)


def write_mesh(path, mesh: TriMesh) -> None:
    if os.fspath(path).lower().endswith(".obj"):
        atomic_write(path, obj_text(mesh))
    else:
        atomic_write(path, ply_bytes(mesh))


def read_mesh(path) -> TriMesh:
    data = read_bytes(path)
    if os.fspath(path).lower().endswith(".obj"):
        return parse_obj(data.decode("utf-8", "replace"))
    return parse_ply(data)
