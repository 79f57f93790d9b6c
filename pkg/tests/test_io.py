from __future__ import annotations

import json
import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avforge.camera import orbit_camera
from avforge.color_field import HashGridField
from avforge.errors import DataError
from avforge.gsplat.cloud import GaussianCloud
from avforge.io.container import pack, unpack
from avforge.io.formats import (GRID_MAGIC, checkpoint_bytes, field_bytes, grid_bytes, metrics_csv, parse_checkpoint,
                                parse_field, parse_grid, parse_rig, read_checkpoint, read_metrics, read_motion,
                                rig_bytes, write_checkpoint, write_metrics, write_motion)
from avforge.io.images import (decode_normals, encode_normals, read_labels, read_mask, read_normals, read_rgb,
                               read_viewset, write_labels, write_mask, write_normals, write_rgb, write_viewset)
from avforge.io.manifest import ProjectManifest
from avforge.io.meshes import parse_obj, parse_ply, ply_bytes, read_mesh, write_mesh
from avforge.mesh.primitives import icosphere
from avforge.mesh.types import DensityGrid, TriMesh, View, ViewSet
from avforge.stages.motion import toy_motion_library


def random_cloud(seed: int, n: int = 7, n_faces: int = 100) -> GaussianCloud:
    r = np.random.default_rng(seed)
    q = r.normal(size=(n, 4))
    return GaussianCloud(r.normal(size=(n, 3)), q / np.linalg.norm(q, axis=1, keepdims=True), r.normal(size=(n, 3)),
                         r.normal(size=n), r.random((n, 3)), r.integers(0, n_faces, n))


class TestContainer:
    def test_round_trip(self):
        arrays = [("a", np.arange(6, dtype=np.float32).reshape(2, 3), "<f4"), ("b", np.array([1, 2]), "<u4")]
        header, got = unpack(pack(b"TEST", {"k": 1}, arrays), b"TEST")
        assert header["k"] == 1
        np.testing.assert_array_equal(got["a"], arrays[0][1])
        assert got["b"].dtype == np.dtype("<u4")

    def test_bad_magic(self):
        with pytest.raises(DataError) as e:
            unpack(pack(b"TEST", {}, []), b"GSAV")
        assert e.value.field == "magic" and e.value.offset == 0

    def test_version_mismatch(self):
        data = bytearray(pack(b"TEST", {}, []))
        data[4:8] = struct.pack("<I", 2)
        with pytest.raises(DataError) as e:
            unpack(bytes(data), b"TEST")
        assert e.value.field == "version" and e.value.offset == 4

    def test_trailing_bytes(self):
        with pytest.raises(DataError, match="trailing"):
            unpack(pack(b"TEST", {}, []) + b"\0", b"TEST")

    @pytest.mark.parametrize("cut, field", [(2, "magic"), (6, "version"), (10, "header_len"), (20, "header")])
    def test_truncated_prefix_names_field(self, cut, field):
        data = pack(b"TEST", {"long_enough": "x" * 20}, [])
        with pytest.raises(DataError) as e:
            unpack(data[:cut], b"TEST")
        assert e.value.field == field
        assert e.value.offset is not None
        assert field in str(e.value)


class TestCheckpoint:
    def test_byte_exact_round_trip(self, tmp_path):
        data = checkpoint_bytes(random_cloud(0), "abc", {"stage": "init"})
        cloud, header = parse_checkpoint(data)
        assert checkpoint_bytes(cloud, header["rig_hash"], header["meta"]) == data
        write_checkpoint(tmp_path / "c.gsav", cloud, "abc", {"stage": "init"})
        assert (tmp_path / "c.gsav").read_bytes() == data

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(0, 20))
    def test_round_trip_property(self, seed, n):
        data = checkpoint_bytes(random_cloud(seed, n))
        cloud, _ = parse_checkpoint(data)
        assert checkpoint_bytes(cloud) == data

    def test_every_truncation_is_data_error(self):
        data = checkpoint_bytes(random_cloud(1, 3))
        for cut in range(len(data)):
            with pytest.raises(DataError) as e:
                parse_checkpoint(data[:cut])
            assert e.value.field is not None

    def test_truncated_array_names_it(self):
        data = checkpoint_bytes(random_cloud(1, 3))
        with pytest.raises(DataError) as e:
            parse_checkpoint(data[:-1])
        assert e.value.field == "binding"

    def test_rig_checks(self, tmp_path, toy_rig):
        write_checkpoint(tmp_path / "c.gsav", random_cloud(2), "not-this-rig")
        with pytest.raises(DataError) as e:
            read_checkpoint(tmp_path / "c.gsav", toy_rig)
        assert e.value.field == "rig_hash"
        write_checkpoint(tmp_path / "d.gsav", random_cloud(2, n_faces=10**6), toy_rig.rig_hash())
        with pytest.raises(DataError) as e:
            read_checkpoint(tmp_path / "d.gsav", toy_rig)
        assert e.value.field == "binding"

    def test_empty_cloud(self):
        data = checkpoint_bytes(GaussianCloud.empty())
        assert parse_checkpoint(data)[0].count == 0

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        write_checkpoint(tmp_path / "c.gsav", random_cloud(3))
        assert os.listdir(tmp_path) == ["c.gsav"]


class TestOtherFormats:
    def test_field(self):
        f = HashGridField(4, 4, 32, 2, 2**8)
        f.tables = np.random.default_rng(0).normal(size=f.tables.shape).astype(np.float32)
        data = field_bytes(f)
        g = parse_field(data)
        assert field_bytes(g) == data
        assert (g.levels, g.base_resolution, g.max_resolution, g.table_size) == (4, 4, 32, 2**8)

    def test_grid_x_fastest(self):
        data = pack(GRID_MAGIC, {"resolution": [2, 2, 2], "origin": [0.0, 0.0, 0.0], "spacing": [1.0, 1.0, 1.0]},
                    [("values", np.arange(8), "<f4")])
        g = parse_grid(data)
        for i, j, k in np.ndindex(2, 2, 2):
            assert g.values[i, j, k] == i + 2 * (j + 2 * k)
        assert grid_bytes(g) == data

    def test_grid_round_trip(self):
        g = DensityGrid.from_function(lambda p: np.linalg.norm(p, axis=-1) - 1, [-1.5] * 3, [1.5] * 3, (5, 6, 7))
        data = grid_bytes(g)
        h = parse_grid(data)
        assert h.resolution == (5, 6, 7)
        assert grid_bytes(h) == data

    def test_grid_value_count(self):
        data = pack(GRID_MAGIC, {"resolution": [2, 2, 3], "origin": [0, 0, 0], "spacing": [1, 1, 1]},
                    [("values", np.arange(8), "<f4")])
        with pytest.raises(DataError) as e:
            parse_grid(data)
        assert e.value.field == "values"

    def test_rig(self, toy_rig):
        data = rig_bytes(toy_rig)
        rig = parse_rig(data)
        assert rig_bytes(rig) == data
        assert rig.joint_names == toy_rig.joint_names

    def test_ply(self, tmp_path):
        m = icosphere(1)
        m = TriMesh(m.vertices, m.faces, np.arange(m.n_faces) % 3)
        data = ply_bytes(m)
        assert ply_bytes(parse_ply(data)) == data
        write_mesh(tmp_path / "m.ply", m)
        back = read_mesh(tmp_path / "m.ply")
        np.testing.assert_array_equal(back.faces, m.faces)
        np.testing.assert_array_equal(back.face_labels, m.face_labels)

    def test_ply_truncated(self):
        data = ply_bytes(icosphere(1))
        with pytest.raises(DataError) as e:
            parse_ply(data[:-5])
        assert e.value.field == "face"

    def test_obj(self):
        m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        np.testing.assert_array_equal(m.faces, [[0, 1, 2], [0, 2, 3]])
        with pytest.raises(DataError):
            parse_obj("v 0 0 0\nf 1 2 3\n")

    def test_motion(self, tmp_path, toy_rig):
        m = toy_motion_library(toy_rig, count=4)
        write_motion(tmp_path / "m.jsonl", m)
        assert read_motion(tmp_path / "m.jsonl").dumps() == m.dumps()

    def test_metrics(self, tmp_path):
        rows = [{"iteration": 0, "loss": 0.1 + 0.2, "stage": "eye"}, {"iteration": 1, "loss": 1e-300, "stage": "eye"}]
        write_metrics(tmp_path / "m.csv", rows, ("iteration", "loss", "stage"))
        back = read_metrics(tmp_path / "m.csv")
        assert [float(r["loss"]) for r in back] == [0.1 + 0.2, 1e-300]
        assert metrics_csv(rows, ("iteration", "loss", "stage")) == (tmp_path / "m.csv").read_text()


class TestImages:
    def test_rgb_quantized_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, (5, 7, 3)) / 255.0
        write_rgb(tmp_path / "a.png", img)
        np.testing.assert_array_equal(read_rgb(tmp_path / "a.png"), img)

    def test_normals_16bit(self, tmp_path, rng):
        n = rng.normal(size=(6, 4, 3))
        n /= np.linalg.norm(n, axis=2, keepdims=True)
        n[0, 0] = 0.0
        write_normals(tmp_path / "n.png", n)
        back = read_normals(tmp_path / "n.png")
        assert np.max(np.abs(back - n)) <= 1.0 / 65535 + 1e-12
        assert np.all(back[0, 0] == 0)

    def test_normal_encoding(self):
        q = encode_normals(np.array([[[-1.0, 0.0, 1.0]]]))
        np.testing.assert_array_equal(q, [[[0, 32768, 65535]]])
        np.testing.assert_allclose(decode_normals(q), [[[-1.0, 2 * 32768 / 65535 - 1, 1.0]]])

    def test_normals_reject_8bit(self, tmp_path):
        write_rgb(tmp_path / "a.png", np.zeros((2, 2, 3)))
        with pytest.raises(DataError):
            read_normals(tmp_path / "a.png")

    def test_masks_and_labels(self, tmp_path, rng):
        mask = rng.random((5, 6)) > 0.5
        labels = rng.integers(0, 11, (5, 6))
        write_mask(tmp_path / "m.png", mask)
        write_labels(tmp_path / "l.png", labels)
        np.testing.assert_array_equal(read_mask(tmp_path / "m.png"), mask)
        np.testing.assert_array_equal(read_labels(tmp_path / "l.png"), labels)

    def test_bad_png(self, tmp_path):
        (tmp_path / "x.png").write_bytes(b"not a png")
        with pytest.raises(DataError):
            read_rgb(tmp_path / "x.png")

    def test_viewset(self, tmp_path, rng):
        cam = orbit_camera(30.0, 10.0, 3.0, width=8, height=6)
        v = View(cam, rng.integers(0, 256, (6, 8, 3)) / 255.0, None, rng.random((6, 8)) > 0.5, None)
        write_viewset(tmp_path / "views", ViewSet([v, View(cam, v.rgb)]))
        back = read_viewset(tmp_path / "views")
        assert len(back) == 2
        np.testing.assert_array_equal(back[0].rgb, v.rgb)
        np.testing.assert_array_equal(back[0].face_mask, v.face_mask)
        assert back[1].face_mask is None
        np.testing.assert_allclose(back[0].camera.world_to_camera, cam.world_to_camera)
        assert (back[0].camera.width, back[0].camera.height) == (8, 6)


class TestManifest:
    def _write(self, tmp_path, **d):
        p = tmp_path / "project.json"
        p.write_text(json.dumps(d))
        return p

    def test_relative_paths(self, tmp_path):
        (tmp_path / "rig.bin").write_bytes(b"")
        (tmp_path / "eye.json").write_text("{}")
        m = ProjectManifest.load(self._write(tmp_path, output_dir="out", rig="rig.bin", configs={"eye": "eye.json"},
                                             seed=4))
        assert m.rig == str(tmp_path / "rig.bin")
        assert m.output_dir == str(tmp_path / "out")
        assert m.configs == {"eye": str(tmp_path / "eye.json")}
        assert m.seed == 4

    def test_missing_file_names_key(self, tmp_path):
        with pytest.raises(DataError) as e:
            ProjectManifest.load(self._write(tmp_path, output_dir="out", grid="missing.bin"))
        assert e.value.field == "grid"

    def test_unknown_key_and_version(self, tmp_path):
        with pytest.raises(DataError):
            ProjectManifest.load(self._write(tmp_path, output_dir="out", colour="x"))
        with pytest.raises(DataError) as e:
            ProjectManifest.load(self._write(tmp_path, output_dir="out", version=2))
        assert e.value.field == "version"

    def test_needs_output_dir(self, tmp_path):
        with pytest.raises(DataError):
            ProjectManifest.load(self._write(tmp_path, rig=None))
