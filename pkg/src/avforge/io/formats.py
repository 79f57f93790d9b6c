"""Binary and text file formats: avatar checkpoints, color fields, density grids, rigs,
motion libraries and metrics logs."""

from __future__ import annotations

import csv
import io
import json

import numpy as np

from ..color_field import HashGridField
from ..errors import DataError, ParameterError
from ..gsplat.cloud import PARAM_NAMES, GaussianCloud
from ..mesh.types import DensityGrid
from ..rig.model import BlendshapeRig
from ..stages.motion import MotionLibrary
from .container import atomic_write, pack, read_bytes, require, unpack

CHECKPOINT_MAGIC = b"GSAV"
FIELD_MAGIC = b"HGFD"
GRID_MAGIC = b"DGRD"
RIG_MAGIC = b"RIGB"

CHECKPOINT_FIELDS = PARAM_NAMES + ("binding",)


# --- avatar checkpoint ------------------------------------------------------------------------------------

def checkpoint_bytes(cloud: GaussianCloud, rig_hash: str = "", meta: dict | None = None) -> bytes:
    arrays = [(name, getattr(cloud, name), "<f4") for name in PARAM_NAMES]
    arrays.append(("binding", cloud.binding, "<u4"))
    header = {"count": cloud.count, "rig_hash": rig_hash, "field_order": list(CHECKPOINT_FIELDS),
              "meta": meta or {}}
    return pack(CHECKPOINT_MAGIC, header, arrays)


def parse_checkpoint(data: bytes):
    """Returns (cloud, header)."""
    header, arrays = unpack(data, CHECKPOINT_MAGIC)
    count = header.get("count")
    if not isinstance(count, int) or count < 0:
        raise DataError("checkpoint header has no valid count", field="count")
    cols = {}
    for name, width in zip(CHECKPOINT_FIELDS, (3, 4, 3, None, 3, None)):
        a = require(arrays, name)
        want = (count,) if width is None else (count, width)
        if a.shape != want:
            raise DataError(f"{name} has shape {a.shape}, expected {want}", field=name)
        cols[name] = a
    return GaussianCloud(**cols), header


def write_checkpoint(path, cloud: GaussianCloud, rig_hash: str = "", meta: dict | None = None) -> None:
    atomic_write(path, checkpoint_bytes(cloud, rig_hash, meta))


def read_checkpoint(path, rig: BlendshapeRig | None = None):
    """Load a checkpoint; with ``rig`` given, its hash and binding range are checked."""
    cloud, header = parse_checkpoint(read_bytes(path))
    if rig is not None:
        if header.get("rig_hash") and header["rig_hash"] != rig.rig_hash():
            raise DataError(f"checkpoint was made for rig {header['rig_hash']}, not {rig.rig_hash()}",
                            field="rig_hash")
        try:
            cloud.validate(rig.n_faces)
        except ParameterError as exc:
            raise DataError(str(exc), field="binding") from exc
    return cloud, header


# --- color field -------------------------------------------------------------------------------------------

def field_bytes(fld: HashGridField) -> bytes:
    header = {"levels": fld.levels, "base": fld.base_resolution, "max": fld.max_resolution,
              "feat": fld.features_per_level, "table_size": fld.table_size}
    return pack(FIELD_MAGIC, header, [("tables", fld.tables, "<f4"), ("head_weight", fld.head_weight, "<f4"),
                                      ("head_bias", fld.head_bias, "<f4"), ("bounds", fld.bounds, "<f4")])


def parse_field(data: bytes) -> HashGridField:
    header, arrays = unpack(data, FIELD_MAGIC)
    try:
        L, base, mx, F, T = (int(header[k]) for k in ("levels", "base", "max", "feat", "table_size"))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"field header incomplete: {exc}", field="header") from exc
    tables = require(arrays, "tables", 3)
    if tables.shape != (L, T, F):
        raise DataError(f"tables have shape {tables.shape}, expected {(L, T, F)}", field="tables")
    try:
        return HashGridField(L, base, mx, F, T, tables, require(arrays, "head_weight"), require(arrays, "head_bias"),
                             require(arrays, "bounds"))
    except (ParameterError, ValueError) as exc:
        raise DataError(str(exc), field="header") from exc


def write_field(path, fld: HashGridField) -> None:
    atomic_write(path, field_bytes(fld))


def read_field(path) -> HashGridField:
    return parse_field(read_bytes(path))


# --- density grid ------------------------------------------------------------------------------------------

def grid_bytes(grid: DensityGrid) -> bytes:
    """Values are stored x-fastest: flat index = i + nx * (j + ny * k)."""
    header = {"resolution": list(grid.resolution), "origin": grid.origin.tolist(), "spacing": grid.spacing.tolist()}
    return pack(GRID_MAGIC, header, [("values", grid.values.ravel(order="F"), "<f4")])


def parse_grid(data: bytes) -> DensityGrid:
    header, arrays = unpack(data, GRID_MAGIC)
    try:
        res = [int(n) for n in header["resolution"]]
        origin = np.asarray(header["origin"], dtype=np.float64)
        spacing = np.asarray(header["spacing"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"grid header incomplete: {exc}", field="resolution") from exc
    values = require(arrays, "values", 1)
    if len(res) != 3 or values.size != int(np.prod(res)):
        raise DataError(f"{values.size} values do not fill a {res} grid", field="values")
    return DensityGrid(values.reshape(res, order="F"), origin, spacing)


def write_grid(path, grid: DensityGrid) -> None:
    atomic_write(path, grid_bytes(grid))


def read_grid(path) -> DensityGrid:
    return parse_grid(read_bytes(path))


# --- rig ---------------------------------------------------------------------------------------------------

_RIG_ARRAYS = (("template_vertices", "<f4"), ("faces", "<u4"), ("shape_basis", "<f4"),
               ("expression_basis", "<f4"), ("joints", "<f4"), ("parents", "<i4"),
               ("skinning_weights", "<f4"), ("face_partition", "<i4"), ("eyelid_basis", "<f4"))


def rig_bytes(rig: BlendshapeRig) -> bytes:
    from ..rig.model import PARTITION_NAMES

    header = {"joint_names": list(rig.joint_names), "partition_names": list(PARTITION_NAMES)}
    return pack(RIG_MAGIC, header, [(name, getattr(rig, name), dt) for name, dt in _RIG_ARRAYS])


def parse_rig(data: bytes) -> BlendshapeRig:
    from ..rig.model import PARTITION_NAMES

    header, arrays = unpack(data, RIG_MAGIC)
    if header.get("partition_names") != list(PARTITION_NAMES):
        raise DataError("rig partitions do not match this build", field="partition_names")
    kwargs = {name: require(arrays, name) for name, _ in _RIG_ARRAYS}
    try:
        return BlendshapeRig(**kwargs, joint_names=tuple(header.get("joint_names", ()))).validate()
    except (ParameterError, ValueError) as exc:
        raise DataError(f"invalid rig: {exc}", field="rig") from exc


def write_rig(path, rig: BlendshapeRig) -> None:
    atomic_write(path, rig_bytes(rig))


def read_rig(path) -> BlendshapeRig:
    return parse_rig(read_bytes(path))


# --- motion library and metrics ----------------------------------------------------------------------------

def write_motion(path, motions: MotionLibrary) -> None:
    atomic_write(path, motions.dumps())


def read_motion(path) -> MotionLibrary:
    return MotionLibrary.loads(read_bytes(path).decode("utf-8"))


def metrics_csv(rows, fields) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def write_metrics(path, rows, fields) -> None:
    atomic_write(path, metrics_csv(rows, fields))


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(read_bytes(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: malformed JSON: {exc}") from exc
