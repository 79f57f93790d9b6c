"""Procedural, license-free toy head rig used by tests and demos.

Ellipsoid head (y up, facing +z) with a cut mouth seam whose lower lip rides
the jaw joint, two eyeballs with eyelid caps that close via blendshapes, a
mouth-interior pocket, a neck cylinder and two-part teeth. About 2k faces.
"""

from __future__ import annotations

import numpy as np

from ..geometry import rotation_about
from ..mesh.types import TriMesh
from .model import JOINT_NAMES, PARTITION_NAMES, BlendshapeRig, attach_teeth

HEAD_RADII = np.array([0.8, 1.0, 0.9])
EYE_RADIUS = 0.12
EYELID_RADIUS = 0.15
EYELID_CLOSE_ANGLE = np.radians(60.0)
HEAD_CENTER = np.zeros(3)


def _uv_sphere(n_lat: int, n_lon: int, polar_max: float = np.pi, closed_bottom: bool = True):
    """Vertices on the unit sphere (poles on +/-y) and outward-wound faces.

    Returns vertices, faces and a (ring, column) -> vertex index table.
    """
    verts = [np.array([0.0, 1.0, 0.0])]
    index = {(0, c): 0 for c in range(n_lon)}
    last = n_lat if closed_bottom else n_lat + 1
    for r in range(1, last):
        th = polar_max * r / n_lat
        for c in range(n_lon):
            ph = 2 * np.pi * c / n_lon
            index[(r, c)] = len(verts)
            verts.append(np.array([np.sin(th) * np.sin(ph), np.cos(th), np.sin(th) * np.cos(ph)]))
    if closed_bottom:
        bottom = len(verts)
        verts.append(np.array([0.0, -1.0, 0.0]))
        for c in range(n_lon):
            index[(n_lat, c)] = bottom
    faces = []
    for r in range(n_lat):
        for c in range(n_lon):
            c1 = (c + 1) % n_lon
            a, b = index[(r, c)], index[(r, c1)]
            d, e = index[(r + 1, c)], index[(r + 1, c1)]
            if a != b:
                faces.append((a, d, b))
            if d != e:
                faces.append((b, d, e))
    return np.array(verts), np.array(faces, dtype=np.int64), index


def _rbf_field(points, centers, directions, sigma):
    out = np.zeros_like(points)
    for c, d in zip(centers, directions):
        w = np.exp(-np.sum((points - c) ** 2, axis=1) / (2 * sigma**2))
        out += w[:, None] * np.asarray(d)
    return out


def toy_teeth(seam_y: float, front_z: float, n_seg: int = 8) -> TriMesh:
    """Two disconnected curved bars (upper above ``seam_y``, lower below)."""
    radius, thick, height, span = 0.28, 0.04, 0.07, np.radians(55)
    center_z = front_z - radius
    verts, faces = [], []
    for sign in (+1, -1):
        y0 = seam_y + sign * 0.012
        y1 = y0 + sign * height
        base = len(verts)
        for s in range(n_seg + 1):
            a = -span + 2 * span * s / n_seg
            for rr in (radius, radius - thick):
                for yy in (y0, y1):
                    verts.append((rr * np.sin(a), yy, center_z + rr * np.cos(a)))
        # ring of 4 corners per station: (outer,y0) (outer,y1) (inner,y0) (inner,y1)
        quads = [(0, 1), (1, 3), (3, 2), (2, 0)]
        for s in range(n_seg):
            p, q = base + 4 * s, base + 4 * (s + 1)
            for i, j in quads:
                faces += [(p + i, q + i, q + j), (p + i, q + j, p + j)]
        for st, flip in ((base, False), (base + 4 * n_seg, True)):
            tri = [(st, st + 1, st + 3), (st, st + 3, st + 2)]
            faces += [t[::-1] if flip else t for t in tri]
    v = np.array(verts)
    f = np.array(faces, dtype=np.int64)
    # orient outward: flip any face whose normal points toward the bar centerline
    n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    c = v[f].mean(1)
    ang = np.arctan2(c[:, 0], c[:, 2] - center_z)
    mid_r = radius - thick / 2
    axis_pt = np.stack([mid_r * np.sin(ang), np.where(c[:, 1] > seam_y, seam_y + 0.012 + height / 2,
                                                       seam_y - 0.012 - height / 2),
                        center_z + mid_r * np.cos(ang)], axis=1)
    inward = np.sum(n * (c - axis_pt), axis=1) < 0
    f[inward] = f[inward][:, ::-1]
    return TriMesh(v, f)


def make_toy_rig(n_lat: int = 22, n_lon: int = 32, seed: int = 0) -> BlendshapeRig:
    rng = np.random.default_rng(seed)
    P = {name: i for i, name in enumerate(PARTITION_NAMES)}
    joints = np.array([
        [0.0, -1.6, 0.0],  # root
        [0.0, -1.0, 0.0],  # neck
        [0.0, -0.7, 0.0],  # head
        [0.0, -0.25, 0.0],  # jaw
        [0.3, 0.2, 0.74],  # eye_l
        [-0.3, 0.2, 0.74],  # eye_r
    ])
    parents = np.array([-1, 0, 1, 2, 2, 2])
    J = {n: i for i, n in enumerate(JOINT_NAMES)}

    parts_v, parts_f, parts_w, parts_p = [], [], [], []

    def add(v, f, w, p):
        off = sum(len(x) for x in parts_v)
        parts_v.append(v)
        parts_f.append(f + off)
        parts_w.append(w)
        parts_p.append(p)
        return off

    # --- head with a mouth seam -------------------------------------------------
    unit, faces, idx = _uv_sphere(n_lat, n_lon)
    hv = unit * HEAD_RADII + HEAD_CENTER
    seam_ring = int(np.argmin([abs(np.cos(np.pi * r / n_lat) * HEAD_RADII[1] + 0.5) for r in range(n_lat)]))
    half = max(2, int(round(n_lon * 30 / 360)))
    mouth_cols = [c % n_lon for c in range(-half, half + 1)]
    inner_cols = mouth_cols[1:-1]
    dup = {}
    for c in inner_cols:
        dup[idx[(seam_ring, c)]] = len(hv) + len(dup)
    hv = np.concatenate([hv, hv[list(dup.keys())]])
    # faces just below the seam inside the mouth span use the lower-lip copies
    fc = np.array(faces)
    below = []
    for k, (a, b, c) in enumerate(fc):
        rows = {v for v in (a, b, c)}
        ring_of = {idx[(r, cc)]: r for (r, cc) in idx}
        rr = [ring_of.get(v, -1) for v in rows]
        if max(rr) == seam_ring + 1 and min(rr) == seam_ring:
            below.append(k)
    for k in below:
        fc[k] = [dup.get(v, v) for v in fc[k]]
    faces = fc
    nh = len(hv)
    rel = hv - HEAD_CENTER
    phi = np.arctan2(rel[:, 0], rel[:, 2])
    w_head = np.zeros((nh, len(joints)))
    ramp_y = np.clip((-0.5 - rel[:, 1]) / 0.1, 0, 1)
    ramp_phi = np.clip((np.cos(phi) - np.cos(np.radians(75))) / (np.cos(np.radians(45)) - np.cos(np.radians(75))), 0, 1)
    wj = ramp_y * ramp_phi * (rel[:, 2] > 0)
    wj[list(dup.values())] = 1.0
    wj[list(dup.keys())] = 0.0
    w_head[:, J["jaw"]] = wj
    w_head[:, J["head"]] = 1.0 - wj

    cen = hv[faces].mean(1)
    eye_l, eye_r = joints[J["eye_l"]], joints[J["eye_r"]]
    part = np.full(len(faces), P["face"])
    part[(cen[:, 2] < 0) | (cen[:, 1] > 0.45)] = P["scalp"]
    part[(cen[:, 2] < 0) & (cen[:, 1] < -0.6)] = P["body"]
    near_eye = (np.linalg.norm(cen - eye_l, axis=1) < 0.25) | (np.linalg.norm(cen - eye_r, axis=1) < 0.25)
    part[near_eye] = P["eyelid_region"]
    jaw_face = (w_head[faces, J["jaw"]].mean(1) > 0.5)
    part[jaw_face] = P["jaw"]
    head_off = add(hv, faces, w_head, part)

    # --- eyeballs and eyelid caps ----------------------------------------------
    eyelid_offsets = []
    for k, (name, center) in enumerate((("l", eye_l), ("r", eye_r))):
        ev, ef, _ = _uv_sphere(8, 12)
        w = np.zeros((len(ev), len(joints)))
        w[:, J["eye_" + name]] = 1.0
        add(ev * EYE_RADIUS + center, ef, w, np.full(len(ef), P["eyeball_" + name]))

        cv, cf, _ = _uv_sphere(5, 12, polar_max=np.radians(80), closed_bottom=False)
        cap = cv * EYELID_RADIUS
        w = np.zeros((len(cv), len(joints)))
        w[:, J["head"]] = 1.0
        off = add(cap + center, cf, w, np.full(len(cf), P["eyelid_region"]))
        closed = cap @ rotation_about([1.0, 0.0, 0.0], EYELID_CLOSE_ANGLE).T
        eyelid_offsets.append((k, off, closed - cap))

    # --- mouth interior pocket -------------------------------------------------
    seam_y = float(np.cos(np.pi * seam_ring / n_lat) * HEAD_RADII[1])
    mv, mf, _ = _uv_sphere(6, 12)
    mv = mv * np.array([0.28, 0.14, 0.28]) + np.array([0.0, seam_y, 0.42])
    w = np.zeros((len(mv), len(joints)))
    low = mv[:, 1] < seam_y
    w[:, J["jaw"]] = low
    w[:, J["head"]] = ~low
    add(mv, mf, w, np.full(len(mf), P["mouth_interior"]))

    # --- neck --------------------------------------------------------------------
    nseg, nring = 16, 4
    ys = np.linspace(-1.6, -0.75, nring)
    nv = np.array([[0.35 * np.sin(2 * np.pi * s / nseg), y, 0.35 * np.cos(2 * np.pi * s / nseg) - 0.1]
                   for y in ys for s in range(nseg)])
    nf = []
    for r in range(nring - 1):
        for s in range(nseg):
            a, b = r * nseg + s, r * nseg + (s + 1) % nseg
            c, d = a + nseg, b + nseg
            nf += [(a, b, d), (a, d, c)]
    w = np.zeros((len(nv), len(joints)))
    wn = np.clip((nv[:, 1] + 1.6) / 0.6, 0, 1)
    w[:, J["neck"]] = wn
    w[:, J["root"]] = 1 - wn
    add(nv, np.array(nf), w, np.full(len(nf), P["body"]))

    V = np.concatenate(parts_v)
    F = np.concatenate(parts_f)
    W = np.concatenate(parts_w)
    FP = np.concatenate(parts_p)
    nv_total = len(V)

    eyelid = np.zeros((2, nv_total, 3))
    for k, off, d in eyelid_offsets:
        eyelid[k, off : off + len(d)] = d

    # --- blendshapes -------------------------------------------------------------
    skin = np.zeros(nv_total, dtype=bool)
    skin[head_off : head_off + nh] = True
    front = skin & (V[:, 2] > 0)
    corners = [np.array([s * 0.33, seam_y, 0.72]) for s in (1, -1)]
    brows = [np.array([s * 0.3, 0.42, 0.8]) for s in (1, -1)]
    cheeks = [np.array([s * 0.5, -0.2, 0.65]) for s in (1, -1)]
    lips = [np.array([0.0, seam_y, 0.78])]
    n_out = V / np.linalg.norm(V, axis=1, keepdims=True)
    expr = [
        _rbf_field(V, corners, [(0, 0.08, -0.02)] * 2, 0.12),  # smile
        _rbf_field(V, brows, [(0, 0.06, 0)] * 2, 0.12),  # brow raise
        _rbf_field(V, cheeks, [(0, 0, 0)] * 2, 0.15) + 0.06 * n_out * np.exp(
            -np.min([np.sum((V - c) ** 2, 1) for c in cheeks], axis=0) / (2 * 0.15**2))[:, None],  # puff
        _rbf_field(V, lips, [(0, 0, 0.05)], 0.12),  # pucker
        _rbf_field(V, corners, [(0, -0.06, 0)] * 2, 0.12),  # frown
        _rbf_field(V, brows, [(0, -0.04, 0.01)] * 2, 0.1),  # brow lower
    ]
    for _ in range(2):
        cs = V[front][rng.choice(int(front.sum()), 4, replace=False)]
        expr.append(_rbf_field(V, cs, rng.normal(scale=0.03, size=(4, 3)), 0.2))
    E = np.stack(expr, axis=2) * front[:, None, None]
    shapes = []
    for _ in range(6):
        cs = V[skin][rng.choice(int(skin.sum()), 5, replace=False)]
        shapes.append(_rbf_field(V, cs, rng.normal(scale=0.04, size=(5, 3)), 0.35))
    S = np.stack(shapes, axis=2) * skin[:, None, None]

    rig = BlendshapeRig(V, F, S, E, joints, parents, W, FP, eyelid, JOINT_NAMES)
    front_z = float(np.sqrt(max(1 - (seam_y / HEAD_RADII[1]) ** 2, 0.0)) * HEAD_RADII[2]) - 0.07
    rig = attach_teeth(rig, toy_teeth(seam_y, front_z))
    return rig.validate()


PARTITION_COLORS = {
    "face": (0.86, 0.66, 0.52),
    "jaw": (0.86, 0.66, 0.52),
    "eyelid_region": (0.82, 0.6, 0.48),
    "scalp": (0.28, 0.18, 0.1),
    "body": (0.2, 0.3, 0.62),
    "eyeball_l": (0.95, 0.95, 0.95),
    "eyeball_r": (0.95, 0.95, 0.95),
    "teeth_upper": (0.9, 0.88, 0.8),
    "teeth_lower": (0.9, 0.88, 0.8),
    "mouth_interior": (0.45, 0.1, 0.1),
}


def toy_surface_color(points: np.ndarray, partition: np.ndarray, rig: BlendshapeRig) -> np.ndarray:
    """Reference albedo of the toy head: partition colors, dark irises, a soft stripe pattern. [N, 3]"""
    base = np.array([PARTITION_COLORS[n] for n in PARTITION_NAMES])
    col = base[partition].copy()
    for k, name in enumerate(("eyeball_l", "eyeball_r")):
        on = partition == PARTITION_NAMES.index(name)
        c = rig.joints[rig.joint_index(("eye_l", "eye_r")[k])]
        d = points[on] - c
        cos = d[:, 2] / np.maximum(np.linalg.norm(d, axis=1), 1e-12)
        col[on] = np.where((cos > 0.85)[:, None], (0.15, 0.25, 0.35), col[on])
        col[on] = np.where((cos > 0.97)[:, None], (0.02, 0.02, 0.02), col[on])
    skin = np.isin(partition, [PARTITION_NAMES.index(n) for n in ("face", "jaw", "scalp", "body")])
    pattern = 0.08 * np.sin(6.0 * points[:, 0]) * np.sin(5.0 * points[:, 1] + 1.0)
    col[skin] += pattern[skin, None]
    return np.clip(col, 0.0, 1.0)


def toy_views(rig: BlendshapeRig, n_views: int = 8, resolution: int = 64, radius: float = 3.2,
              pitch_deg: float = 10.0, background=0.0):
    """Reference views of the neutral toy head on an orbit: RGB, normals and face/hair masks."""
    from ..camera import orbit_camera
    from ..mesh.types import View, ViewSet
    from ..raster import rasterize_triangles
    from .maps import render_normal_map
    from .model import RigParams, deform

    posed = deform(rig, RigParams.neutral(rig))
    part = rig.face_partition
    face_ids = [PARTITION_NAMES.index(n) for n in ("face", "jaw", "eyelid_region", "eyeball_l", "eyeball_r")]
    views = []
    for k in range(n_views):
        yaw = 360.0 * k / n_views
        pitch = pitch_deg if k % 2 == 0 else -pitch_deg
        cam = orbit_camera(yaw, pitch, radius, width=resolution, height=resolution)
        vis = rasterize_triangles(posed.vertices, posed.faces, cam)
        m = vis.covered
        rgb = np.empty((resolution, resolution, 3))
        rgb[...] = background
        fid = vis.face_id[m]
        rgb[m] = toy_surface_color(vis.hit_points(posed.vertices, posed.faces)[m], part[fid], rig)
        face_mask = np.zeros((resolution, resolution), dtype=bool)
        hair_mask = np.zeros((resolution, resolution), dtype=bool)
        face_mask[m] = np.isin(part[fid], face_ids)
        hair_mask[m] = part[fid] == PARTITION_NAMES.index("scalp")
        views.append(View(cam, rgb, render_normal_map(posed, cam, vis), face_mask, hair_mask))
    return ViewSet(views)
