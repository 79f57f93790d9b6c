"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure,
4 guidance transport failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .errors import AvforgeError, DataError, GuidanceTransportError, NumericError

log = logging.getLogger("avforge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_TRANSPORT = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- helpers ------------------------------------------------------------------------------------------------

def _out_path(path: str) -> str:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    return path


def _load_rig(args):
    from .io.formats import read_rig

    return read_rig(args.rig)


def _load_points(path) -> np.ndarray:
    from .io.meshes import read_mesh

    return read_mesh(path).vertices


def _stage_config(args, name: str):
    from .stages.config import StageConfig, desk_configs, full_scale_configs

    if getattr(args, "config", None):
        cfg = StageConfig.load(args.config)
        if cfg.name != name:
            raise DataError(f"{args.config} configures stage {cfg.name!r}, expected {name!r}", field="name")
    else:
        seed = args.seed or 0
        cfg = (desk_configs(seed) if args.desk else full_scale_configs(seed))[name]
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "iterations", None):
        cfg.iterations = args.iterations
    if getattr(args, "resolution", None):
        cfg.resolution = args.resolution  # renders must match the codec
    return cfg.validate()


def _target_image(args, shape):
    from .io.images import read_rgb

    if getattr(args, "target", None):
        img = read_rgb(args.target)
        if img.shape != tuple(shape):
            raise DataError(f"target image is {img.shape}, the codec expects {tuple(shape)}", field="target")
        return img
    return np.broadcast_to(np.asarray(args.target_color, dtype=np.float64), tuple(shape)).copy()


def _codec(args):
    from .guidance.oracles import AvgPoolCodec, IdentityCodec

    shape = (args.resolution, args.resolution, 3)
    return IdentityCodec(shape) if args.codec == "identity" else AvgPoolCodec(shape, 4)


def _guidance(args):
    from .guidance.bridge import BridgeClient, RemoteOracle
    from .guidance.bundle import Guidance
    from .guidance.oracles import MapControlAdapter, TargetImageOracle
    from .guidance.schedule import NoiseSchedule

    codec = _codec(args)
    schedule = NoiseSchedule.linear()
    if args.guidance == "stub":
        oracle = TargetImageOracle(codec.encode(_target_image(args, (args.resolution, args.resolution, 3))),
                                   schedule, spread=args.spread)
        adapter = None if args.no_control else MapControlAdapter()
    else:
        host, _, port = args.guidance.rpartition(":")
        if not host or not port.isdigit():
            raise UsageError(f"--guidance must be 'stub' or HOST:PORT, got {args.guidance!r}")
        oracle = RemoteOracle(BridgeClient(host, int(port), args.timeout), schedule)
        adapter = None if args.no_control else oracle
    return Guidance(oracle, codec, adapter, text=args.prompt)


def _add_guidance_args(p):
    p.add_argument("--guidance", default="stub", help="'stub' (local target-image oracle) or HOST:PORT")
    p.add_argument("--target", help="target PNG for the stub oracle (codec resolution)")
    p.add_argument("--target-color", type=float, nargs=3, default=(0.5, 0.5, 0.5))
    p.add_argument("--spread", type=float, default=0.3, help="stub oracle prior spread")
    p.add_argument("--codec", choices=("identity", "avgpool"), default="identity")
    p.add_argument("--resolution", type=int, default=64, help="codec and region render resolution")
    p.add_argument("--prompt", default="a portrait of a person")
    p.add_argument("--no-control", action="store_true")
    p.add_argument("--timeout", type=float, default=30.0)


def _add_stage_args(p, needs_motion: bool, needs_guidance: bool = True):
    p.add_argument("--rig", required=True)
    p.add_argument("--checkpoint", required=True, help="input avatar checkpoint")
    if needs_motion:
        p.add_argument("--motion", required=True, help="motion library (JSON lines)")
    p.add_argument("--config", help="stage config JSON (defaults to the built-in schedule)")
    p.add_argument("--desk", action="store_true", help="desk-scale schedule (iterations / 10, cfg 1)")
    p.add_argument("--iterations", type=int)
    p.add_argument("-o", "--output", required=True, help="output directory")
    if needs_guidance:
        _add_guidance_args(p)


def _finish_stage(args, name, result):
    from .stages.pipeline import save_stage

    os.makedirs(args.output, exist_ok=True)
    ckpt, metrics = save_stage(args.output, name, result)
    last = result.metrics[-1] if result.metrics else {}
    print(f"{name}: {len(result.metrics)} iterations, final loss {last.get('total', 0.0):.6g} -> {ckpt}")
    return EXIT_OK


def _load_avatar(args):
    from .io.formats import read_checkpoint
    from .stages.avatar import Avatar

    rig = _load_rig(args)
    cloud, _ = read_checkpoint(args.checkpoint, rig)
    cloud.renormalize()
    return Avatar(rig, cloud)


# --- mesh ---------------------------------------------------------------------------------------------------

def cmd_mesh_extract(args):
    from .io.formats import read_grid
    from .io.meshes import write_mesh
    from .mesh.marching_cubes import marching_cubes

    mesh = marching_cubes(read_grid(args.grid).validate(), args.iso, outward=args.outward)
    write_mesh(_out_path(args.output), mesh)
    print(f"extracted {mesh.n_vertices} vertices, {mesh.n_faces} faces")
    return EXIT_OK


def cmd_mesh_smooth(args):
    from .io.meshes import read_mesh, write_mesh
    from .mesh.smoothing import laplacian_smooth

    write_mesh(_out_path(args.output), laplacian_smooth(read_mesh(args.input), args.iterations, args.lam))
    return EXIT_OK


def cmd_mesh_refine(args):
    from .io.images import read_viewset
    from .io.meshes import read_mesh, write_mesh
    from .mesh.refine import refine_with_normals

    mesh = refine_with_normals(read_mesh(args.input), read_viewset(args.views), args.steps, args.lr,
                               args.w_consistency)
    write_mesh(_out_path(args.output), mesh)
    return EXIT_OK


def cmd_mesh_segment(args):
    from .io.images import read_viewset
    from .io.meshes import read_mesh, write_mesh
    from .mesh.segment import segment_by_face_voting
    from .mesh.types import FACE_LABELS

    mesh = segment_by_face_voting(read_mesh(args.input), read_viewset(args.views), args.threshold)
    write_mesh(_out_path(args.output), mesh)
    counts = np.bincount(mesh.face_labels, minlength=len(FACE_LABELS))
    print(", ".join(f"{name} {int(c)}" for name, c in zip(FACE_LABELS, counts)))
    return EXIT_OK


# --- rig ----------------------------------------------------------------------------------------------------

def cmd_rig_sample_points(args):
    from .io.meshes import read_mesh, write_mesh
    from .mesh.sampling import sample_surface_points
    from .mesh.types import TriMesh

    samples = sample_surface_points(read_mesh(args.mesh), args.count, args.seed or 0)
    write_mesh(_out_path(args.output), TriMesh(samples.points, np.zeros((0, 3), dtype=np.int64)))
    return EXIT_OK


def cmd_rig_assign(args):
    from .io.formats import write_json
    from .mesh.rigging import nearest_face_rigging

    faces = nearest_face_rigging(_load_points(args.points), _load_rig(args), args.partition)
    write_json(_out_path(args.output), {"partition": args.partition, "faces": faces.tolist()})
    return EXIT_OK


# --- field --------------------------------------------------------------------------------------------------

def cmd_field_fit(args):
    from .color_field import HashGridField, fit
    from .io.formats import write_field
    from .io.images import read_viewset
    from .io.meshes import read_mesh

    fld = fit(HashGridField.initialize(args.seed or 0), read_mesh(args.mesh), read_viewset(args.views),
              args.lr, args.steps)
    write_field(_out_path(args.output), fld)
    return EXIT_OK


def cmd_field_query(args):
    from .color_field import query_world
    from .io.formats import read_field

    colors = query_world(read_field(args.field), _load_points(args.points))
    lines = "".join(f"{r:.6f},{g:.6f},{b:.6f}\n" for r, g, b in colors)
    if args.output:
        from .io.container import atomic_write

        atomic_write(_out_path(args.output), "r,g,b\n" + lines)
    else:
        sys.stdout.write("r,g,b\n" + lines)
    return EXIT_OK


# --- avatar -------------------------------------------------------------------------------------------------

def cmd_avatar_init(args):
    from .gsplat.init import build_initial_cloud
    from .io.formats import read_field
    from .io.images import read_viewset
    from .io.meshes import read_mesh
    from .stages.avatar import Avatar
    from .stages.runner import run_initialization

    rig = _load_rig(args)
    extra = [(read_mesh(p), part) for p, part in ((args.hair, "scalp"), (args.clothing, "body")) if p]
    fld = read_field(args.field) if args.field else None
    cloud = build_initial_cloud(rig, args.splats, args.seed or 0, fld, extra)
    result = run_initialization(Avatar(rig, cloud), read_viewset(args.views), _stage_config(args, "init"))
    return _finish_stage(args, "init", result)


def cmd_avatar_eye(args):
    from .stages.runner import run_eye_pretrain

    return _finish_stage(args, "eye", run_eye_pretrain(_load_avatar(args), _guidance(args), _stage_config(args, "eye")))


def _motions(args, rig):
    from .io.formats import read_motion

    return read_motion(args.motion).validate(rig)


def cmd_avatar_mouth(args):
    from .stages.runner import run_mouth_pretrain

    av = _load_avatar(args)
    return _finish_stage(args, "mouth", run_mouth_pretrain(av, _guidance(args), _motions(args, av.rig),
                                                           _stage_config(args, "mouth")))


def cmd_avatar_optimize(args):
    from .stages.runner import run_full_optimization

    av = _load_avatar(args)
    return _finish_stage(args, "full", run_full_optimization(av, _guidance(args), _motions(args, av.rig),
                                                             _stage_config(args, "full")))


def cmd_avatar_refine(args):
    from .stages.runner import run_refinement

    av = _load_avatar(args)
    return _finish_stage(args, "refine", run_refinement(av, _guidance(args), _motions(args, av.rig),
                                                        _stage_config(args, "refine")))


def _read_cameras(path):
    from .camera import Camera
    from .io.formats import read_json

    d = read_json(path)
    items = d if isinstance(d, list) else d.get("cameras", [d]) if isinstance(d, dict) else None
    if not items:
        raise DataError(f"{path}: no cameras", field="cameras")
    try:
        return [Camera.from_json(c).validate() for c in items]
    except AvforgeError as exc:
        raise DataError(f"{path}: {exc}", field="cameras") from exc


def cmd_avatar_render(args):
    from .io.images import write_rgb
    from .stages.avatar import pose_avatar, render_posed

    av = _load_avatar(args)
    motions = _motions(args, av.rig)
    cams = _read_cameras(args.camera)
    os.makedirs(args.output, exist_ok=True)
    for i, frame in enumerate(motions.frames):
        posed = pose_avatar(av, frame.params)
        img = render_posed(posed, cams[i % len(cams)], args.background).image.rgb
        write_rgb(os.path.join(args.output, f"frame_{i:04d}.png"), img)
    print(f"wrote {len(motions)} frames to {args.output}")
    return EXIT_OK


def cmd_pipeline(args):
    from .gsplat.init import build_initial_cloud
    from .io.formats import read_field, read_motion, read_rig
    from .io.images import read_viewset
    from .io.manifest import ProjectManifest
    from .io.meshes import read_mesh
    from .stages.avatar import Avatar
    from .stages.config import STAGE_NAMES, StageConfig, desk_configs, full_scale_configs
    from .stages.pipeline import run_pipeline

    m = ProjectManifest.load(args.manifest)
    seed = m.seed if args.seed is None else args.seed
    if m.rig is None or m.views is None or m.motion is None:
        raise DataError("pipeline manifest needs rig, views and motion", field="rig")
    rig = read_rig(m.rig)
    cfgs = desk_configs(seed) if args.desk else full_scale_configs(seed)
    for name, path in m.configs.items():
        if name not in STAGE_NAMES:
            raise DataError(f"unknown stage {name!r} in manifest configs", field=f"configs.{name}")
        cfgs[name] = StageConfig.load(path)
    for cfg in cfgs.values():
        cfg.resolution = args.resolution
    extra = [(read_mesh(p), part) for p, part in ((m.hair, "scalp"), (m.clothing, "body")) if p]
    fld = read_field(m.field) if m.field else None
    cloud = build_initial_cloud(rig, m.splats, seed, fld, extra)
    os.makedirs(m.output_dir, exist_ok=True)
    results = run_pipeline(Avatar(rig, cloud), cfgs, _guidance(args), read_viewset(m.views),
                           read_motion(m.motion).validate(rig), m.output_dir)
    for name, res in results.items():
        print(f"{name}: final loss {res.metrics[-1]['total']:.6g}")
    return EXIT_OK


# --- guidance -----------------------------------------------------------------------------------------------

def cmd_guidance_serve(args):
    from .guidance.bridge import StubServer
    from .guidance.oracles import AffineOracle, IdentityCodec, MapControlAdapter, TargetImageOracle
    from .guidance.schedule import NoiseSchedule

    schedule = NoiseSchedule.linear()
    if args.oracle == "target":
        shape = (args.resolution, args.resolution, 3)
        oracle = TargetImageOracle(_target_image(args, shape), schedule, spread=args.spread)
    else:
        oracle = AffineOracle(args.a, args.b, schedule=schedule)
    server = StubServer(oracle, IdentityCodec(None), MapControlAdapter(), args.host, args.port)
    host, port = server.address
    print(f"listening on {host}:{port}", flush=True)
    try:
        server.serve_forever(args.max_connections)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


def cmd_guidance_test(args):
    from .guidance.bridge import echo_check

    ok = echo_check(args.host, args.port, tuple(args.shape), args.seed or 0, args.timeout)
    print("echo ok" if ok else "echo mismatch")
    if not ok:
        raise GuidanceTransportError("echo round trip was not bit-exact")
    return EXIT_OK


# --- toy data -----------------------------------------------------------------------------------------------

def cmd_toy_rig(args):
    from .io.formats import write_rig
    from .rig.toy import make_toy_rig

    rig = make_toy_rig(seed=args.seed or 0)
    write_rig(_out_path(args.output), rig)
    print(f"toy rig: {rig.n_vertices} vertices, {rig.n_faces} faces, hash {rig.rig_hash()}")
    return EXIT_OK


def cmd_toy_views(args):
    from .io.images import write_viewset
    from .rig.toy import toy_views

    write_viewset(args.output, toy_views(_load_rig(args), args.count, args.resolution, args.radius))
    return EXIT_OK


def cmd_toy_motion(args):
    from .io.formats import write_motion
    from .stages.motion import toy_motion_library

    write_motion(_out_path(args.output), toy_motion_library(_load_rig(args), args.count, args.seed or 0))
    return EXIT_OK


def cmd_toy_grid(args):
    from .io.formats import write_grid
    from .mesh.types import DensityGrid

    r = args.radius
    grid = DensityGrid.from_function(lambda p: np.linalg.norm(p, axis=-1) - r, [-1.0] * 3, [1.0] * 3,
                                     args.resolution)
    write_grid(_out_path(args.output), grid)
    return EXIT_OK


def cmd_toy_camera(args):
    from .camera import orbit_camera
    from .io.formats import write_json

    cams = [orbit_camera(y, args.pitch, args.radius, width=args.resolution, height=args.resolution).to_json()
            for y in args.yaw]
    write_json(_out_path(args.output), {"cameras": cams})
    return EXIT_OK


# --- parser -------------------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="avforge", description="Rigged Gaussian head avatars from mesh to diffusion-guided stages.")
    ap.add_argument("--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    ap.add_argument("--seed", type=int, default=None, help="seed for every random choice")
    groups = ap.add_subparsers(dest="group", required=True, parser_class=_Parser)

    def sub(group, name, fn, help_):
        p = group.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        return p

    mesh = groups.add_parser("mesh", help="mesh extraction and processing").add_subparsers(dest="cmd", required=True)
    p = sub(mesh, "extract", cmd_mesh_extract, "marching cubes on a density grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--iso", type=float, default=0.0)
    p.add_argument("--outward", choices=("increasing", "decreasing"), default="increasing",
                   help="direction of increasing values that counts as outside")
    p.add_argument("-o", "--output", required=True)
    p = sub(mesh, "smooth", cmd_mesh_smooth, "Laplacian smoothing")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--lam", type=float, default=0.5)
    p.add_argument("-o", "--output", required=True)
    p = sub(mesh, "refine", cmd_mesh_refine, "normal-map refinement")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--views", required=True)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--w-consistency", type=float, default=0.1)
    p.add_argument("-o", "--output", required=True)
    p = sub(mesh, "segment", cmd_mesh_segment, "face/hair/clothing labels by multi-view voting")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--views", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("-o", "--output", required=True)

    rig = groups.add_parser("rig", help="point sampling and binding").add_subparsers(dest="cmd", required=True)
    p = sub(rig, "sample-points", cmd_rig_sample_points, "area-weighted surface samples (PLY vertices)")
    p.add_argument("--mesh", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    p = sub(rig, "assign", cmd_rig_assign, "bind points to the nearest face of a rig partition")
    p.add_argument("--rig", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("-o", "--output", required=True)

    fld = groups.add_parser("field", help="hash-grid color field").add_subparsers(dest="cmd", required=True)
    p = sub(fld, "fit", cmd_field_fit, "fit a color field to RGB views of a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--views", required=True)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("-o", "--output", required=True)
    p = sub(fld, "query", cmd_field_query, "colors at points (CSV)")
    p.add_argument("--field", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("-o", "--output")

    av = groups.add_parser("avatar", help="avatar stages and rendering").add_subparsers(dest="cmd", required=True)
    p = sub(av, "init", cmd_avatar_init, "build the rigged cloud and fit it to views")
    p.add_argument("--rig", required=True)
    p.add_argument("--views", required=True)
    p.add_argument("--field")
    p.add_argument("--hair")
    p.add_argument("--clothing")
    p.add_argument("--splats", type=int, default=2000)
    p.add_argument("--config")
    p.add_argument("--desk", action="store_true")
    p.add_argument("--iterations", type=int)
    p.add_argument("-o", "--output", required=True)
    _add_stage_args(sub(av, "pretrain-eye", cmd_avatar_eye, "eye-region pre-training"), needs_motion=False)
    _add_stage_args(sub(av, "pretrain-mouth", cmd_avatar_mouth, "mouth-region pre-training"), needs_motion=True)
    _add_stage_args(sub(av, "optimize", cmd_avatar_optimize, "full multi-region optimization"), needs_motion=True)
    _add_stage_args(sub(av, "refine", cmd_avatar_refine, "final image-space refinement"), needs_motion=True)
    p = sub(av, "render", cmd_avatar_render, "render numbered PNG frames of a motion")
    p.add_argument("--rig", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--motion", required=True)
    p.add_argument("--camera", required=True, help="JSON camera or {\"cameras\": [...]}")
    p.add_argument("--background", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    p.add_argument("-o", "--output", required=True)

    p = groups.add_parser("pipeline", help="run all stages from a project manifest")
    p.set_defaults(fn=cmd_pipeline)
    p.add_argument("--manifest", required=True)
    p.add_argument("--desk", action="store_true")
    _add_guidance_args(p)

    gd = groups.add_parser("guidance", help="guidance bridge").add_subparsers(dest="cmd", required=True)
    p = sub(gd, "serve-stub", cmd_guidance_serve, "serve an analytic oracle over the bridge protocol")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--oracle", choices=("target", "affine"), default="target")
    p.add_argument("--target")
    p.add_argument("--target-color", type=float, nargs=3, default=(0.5, 0.5, 0.5))
    p.add_argument("--spread", type=float, default=0.3)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--a", type=float, default=0.1)
    p.add_argument("--b", type=float, default=0.0)
    p.add_argument("--max-connections", type=int)
    p = sub(gd, "test", cmd_guidance_test, "echo round-trip against a backend")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--shape", type=int, nargs="+", default=(8, 8, 3))
    p.add_argument("--timeout", type=float, default=10.0)

    toy = groups.add_parser("toy", help="procedural test data").add_subparsers(dest="cmd", required=True)
    p = sub(toy, "rig", cmd_toy_rig, "write the toy head rig")
    p.add_argument("-o", "--output", required=True)
    p = sub(toy, "views", cmd_toy_views, "reference views of the neutral toy head")
    p.add_argument("--rig", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--radius", type=float, default=3.2)
    p.add_argument("-o", "--output", required=True)
    p = sub(toy, "motion", cmd_toy_motion, "random motion library")
    p.add_argument("--rig", required=True)
    p.add_argument("--count", type=int, default=24)
    p.add_argument("-o", "--output", required=True)
    p = sub(toy, "grid", cmd_toy_grid, "sphere signed-distance grid on [-1, 1]^3")
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--radius", type=float, default=0.7)
    p.add_argument("-o", "--output", required=True)
    p = sub(toy, "camera", cmd_toy_camera, "orbit cameras as JSON")
    p.add_argument("--yaw", type=float, nargs="+", default=(0.0,))
    p.add_argument("--pitch", type=float, default=0.0)
    p.add_argument("--radius", type=float, default=3.2)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("-o", "--output", required=True)
    return ap


def _limit_threads():
    n = os.environ.get("AVFORGE_THREADS")
    if not n:
        return None
    try:
        count = int(n)
    except ValueError:
        raise UsageError(f"AVFORGE_THREADS must be an integer, got {n!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, count))


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
        limiter = _limit_threads()
        try:
            return args.fn(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GuidanceTransportError as exc:
        print(f"guidance transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (DataError, OSError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AvforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
