from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avforge.camera import look_at, orbit_camera
from avforge.errors import OptimizationError, ParameterError
from avforge.mesh.marching_cubes import CORNER_OFFSETS, EDGE_CORNERS, case_index, marching_cubes
from avforge.mesh.normal_render import render_normals_diff
from avforge.mesh.primitives import icosphere
from avforge.mesh.refine import consistency_loss, refine_with_normals, refinement_loss
from avforge.mesh.rigging import nearest_face_rigging, nearest_faces
from avforge.mesh.sampling import sample_surface_points
from avforge.mesh.segment import segment_by_face_voting
from avforge.mesh.smoothing import laplacian_smooth
from avforge.mesh.types import CLOTHING, FACE, HAIR, DensityGrid, TriMesh, View, ViewSet
from oracles.distance import nearest_face_bruteforce
from oracles.raycast import raycast
from mesh_scenes import edge_counts, fd_check, masked_views, noisy_sphere, rms_radial, sphere_grid, sphere_views
from oracles.voting import vote_labels


class TestMarchingCubes:
    def test_constant_below_iso_is_empty(self):
        g = DensityGrid(np.full((4, 4, 4), -1.0))
        assert marching_cubes(g, 0.0).n_faces == 0

    def test_iso_out_of_range_is_empty(self):
        assert marching_cubes(sphere_grid(8), 10.0).n_faces == 0

    def test_bad_resolution(self):
        with pytest.raises(ParameterError):
            marching_cubes(DensityGrid(np.zeros((1, 3, 3))), 0.0)

    def test_sphere_radial_error(self):
        g = sphere_grid(64)
        m = marching_cubes(g, 0.0)
        err = np.abs(np.linalg.norm(m.vertices, axis=1) - 0.5)
        assert err.max() <= 1.5 * g.spacing.max()
        m.validate()

    def test_sphere_watertight_and_oriented(self):
        m = marching_cubes(sphere_grid(24), 0.0)
        assert set(edge_counts(m.faces).values()) == {2}
        directed = Counter((f[i], f[(i + 1) % 3]) for f in m.faces for i in range(3))
        assert max(directed.values()) == 1
        c = m.vertices[m.faces].mean(1)
        n = np.cross(m.vertices[m.faces[:, 1]] - m.vertices[m.faces[:, 0]],
                     m.vertices[m.faces[:, 2]] - m.vertices[m.faces[:, 0]])
        assert np.all(np.sum(n * c, axis=1) > 0)  # outward for a signed distance

    @pytest.mark.parametrize("corner", range(8))
    def test_single_corner_above_iso(self, corner):
        vals = np.full((2, 2, 2), -1.0)
        off = CORNER_OFFSETS[corner]
        vals[tuple(off)] = 3.0
        m = marching_cubes(DensityGrid(vals), 0.0)
        assert case_index([vals[tuple(o)] for o in CORNER_OFFSETS]) == 255 - (1 << corner)
        assert m.n_faces == 1
        # table oracle: one vertex on each edge touching the corner, a quarter of the way along
        expect = []
        for a, b in EDGE_CORNERS:
            if corner in (a, b):
                other = b if a == corner else a
                expect.append(off + 0.75 * (CORNER_OFFSETS[other] - off))
        got = sorted(map(tuple, np.round(m.vertices[m.faces[0]], 12)))
        assert got == sorted(map(tuple, np.round(np.array(expect, float), 12)))
        tri = m.vertices[m.faces[0]]
        n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        assert np.dot(n, off - tri.mean(0)) > 0

    def test_outward_decreasing_flips(self):
        g = sphere_grid(12)
        a = marching_cubes(g, 0.0)
        b = marching_cubes(g, 0.0, outward="decreasing")
        np.testing.assert_array_equal(a.faces[:, [0, 2, 1]], b.faces)


class TestSmoothing:
    def test_zero_iterations_identity(self):
        _, m = noisy_sphere(2)
        np.testing.assert_array_equal(laplacian_smooth(m, 0).vertices, m.vertices)

    def test_planar_interior_fixed(self):
        n = 5
        xs, ys = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float), indexing="ij")
        v = np.stack([xs.ravel(), ys.ravel(), np.zeros(n * n)], 1)
        f = []
        for i in range(n - 1):
            for j in range(n - 1):
                a, b, c, d = i * n + j, (i + 1) * n + j, (i + 1) * n + j + 1, i * n + j + 1
                f += [[a, b, d], [b, c, d]]
        out = laplacian_smooth(TriMesh(v, f), 3, 0.5)
        interior = (xs.ravel() == 2) & (ys.ravel() == 2)
        np.testing.assert_allclose(out.vertices[interior], v[interior], atol=1e-12)

    def test_reduces_noise(self):
        _, m = noisy_sphere(3)
        out = laplacian_smooth(m, 10, 0.5)
        # deviation about the best-fit radius: uniform smoothing also shrinks the sphere
        spread = lambda v: float(np.std(np.linalg.norm(v, axis=1)))
        assert spread(out.vertices) < spread(m.vertices)
        np.testing.assert_array_equal(out.faces, m.faces)

    def test_bad_lambda(self):
        with pytest.raises(ParameterError):
            laplacian_smooth(icosphere(0), 1, 0.0)

    def test_pure(self):
        _, m = noisy_sphere(1)
        before = m.vertices.copy()
        laplacian_smooth(m, 5)
        np.testing.assert_array_equal(m.vertices, before)


class TestNormalRenderer:
    def test_single_triangle_pixel_jacobian(self, rng):
        cam = look_at((0.2, 0.1, 3), (0, 0, 0), width=16, height=16)
        v = np.array([[-1.0, -0.8, 0.1], [1.0, -0.6, -0.2], [0.1, 1.0, 0.3]])
        f = np.array([[0, 1, 2]])
        r = render_normals_diff(TriMesh(v, f), cam)
        i, j = 8, 8
        assert r.vis.face_id[i, j] == 0
        jac = r.pixel_jacobian(i, j)
        h = 1e-4
        for k in range(3):
            for c in range(3):
                vp, vm = v.copy(), v.copy()
                vp[k, c] += h
                vm[k, c] -= h
                n = lambda vv: render_normals_diff(TriMesh(vv, f), cam, vis=r.vis).image[i, j]
                fd = (n(vp) - n(vm)) / (2 * h)
                np.testing.assert_allclose(jac[k, :, c], fd, rtol=1e-3, atol=1e-8)

    def test_translation_invariance(self, rng):
        cam = look_at((0, 0, 3), (0, 0, 0), width=16, height=16)
        m = icosphere(1)
        r = render_normals_diff(m, cam)
        g = rng.normal(size=r.image.shape)
        gv = r.backward(g)
        along = np.tile(cam.rotation[0], (m.n_vertices, 1))  # image-plane x direction in world space
        assert abs(np.sum(gv * along)) < 1e-6

    def test_two_triangles_match_raycast(self):
        v = np.array([[-1, -1, 0], [1, -1, 0.3], [1, 1, 0], [-1, 1, -0.3]], float)
        f = np.array([[0, 1, 2], [0, 2, 3]])
        cam = orbit_camera(20, 15, 3.0, width=32, height=32)
        r = render_normals_diff(TriMesh(v, f), cam)
        fid, _ = raycast(v, f, cam)
        np.testing.assert_array_equal(r.vis.face_id, fid)
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        m = fid >= 0
        np.testing.assert_allclose(r.image[m], n[fid[m]] @ cam.rotation.T, atol=1e-12)

    def test_backward_fd_random_meshes(self, rng):
        cam = orbit_camera(30, 20, 3.0, width=24, height=24)
        m = icosphere(1)
        for _ in range(3):
            v = m.vertices * (1 + 0.1 * rng.normal(size=(m.n_vertices, 1)))
            r = render_normals_diff(TriMesh(v, m.faces), cam)
            g = rng.normal(size=r.image.shape)
            f = lambda vv: float(np.sum(g * render_normals_diff(TriMesh(vv, m.faces), cam, vis=r.vis).image))
            assert fd_check(f, v, r.backward(g), rng) <= 1e-3


class TestRefine:
    def test_consistency_of_right_angle(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
        f = np.array([[0, 1, 2], [0, 3, 1]])
        loss, _ = consistency_loss(v, f)
        assert loss == pytest.approx(1.0, abs=1e-12)

    def test_consistency_planar_zero(self, rng):
        v = np.c_[rng.uniform(size=(4, 2)), np.zeros(4)]
        v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)
        loss, _ = consistency_loss(v, np.array([[0, 1, 2], [0, 2, 3]]))
        assert abs(loss) <= 1e-9

    def test_stationary_at_own_normals(self):
        m = icosphere(2)
        views = ViewSet([View(c.camera, normal=render_normals_diff(m, c.camera).image) for c in sphere_views(4, 32)])
        out = refine_with_normals(m, views, steps=1, w_consistency=0.0)
        ln, _, _ = refinement_loss(m.vertices, m.faces, views, 0.0)
        assert abs(ln) < 1e-12
        assert np.abs(out.vertices - m.vertices).max() <= 1e-6

    def test_no_supervision(self):
        m = icosphere(1)
        cam = look_at((0, 0, 30), (0, 0, 0), width=8, height=8)
        cam.world_to_camera[:3, 3] += [100, 0, 0]
        with pytest.raises(OptimizationError, match="no normal supervision"):
            refine_with_normals(m, ViewSet([View(cam, normal=np.zeros((8, 8, 3)))]), steps=1)

    def test_total_loss_fd(self, rng):
        _, m = noisy_sphere(2, 0.05, seed=3)
        views = sphere_views(4, 24)
        loss, g, _ = refinement_loss(m.vertices, m.faces, views, 0.1)
        renders = [render_normals_diff(m, v.camera) for v in views]
        from avforge.mesh.refine import normal_loss

        def f(vv):
            frozen = [render_normals_diff(TriMesh(vv, m.faces), v.camera, vis=r.vis) for v, r in zip(views, renders)]
            return normal_loss(vv, m.faces, views, grad=False, renders=frozen)[0] + 0.1 * consistency_loss(
                vv, m.faces, grad=False)[0]
        assert f(m.vertices) == pytest.approx(loss, abs=1e-12)
        assert fd_check(f, m.vertices, g, rng) <= 1e-3

    def test_topology_preserved_and_improves(self):
        true, m = noisy_sphere(2, 0.02)
        out = refine_with_normals(m, sphere_views(8, 48), steps=60)
        np.testing.assert_array_equal(out.faces, m.faces)
        assert out.n_vertices == m.n_vertices
        assert rms_radial(out.vertices) < rms_radial(m.vertices)


class TestVoting:
    def test_matches_raycast_oracle_100_faces(self):
        m = icosphere(2).submesh(np.arange(320) < 100)
        assert m.n_faces == 100
        views = masked_views(m, 4, 32, seed=0)
        out = segment_by_face_voting(m, views)
        np.testing.assert_array_equal(out.face_labels, vote_labels(m.vertices, m.faces, views))

    def test_all_hair(self):
        m = icosphere(1)
        out = segment_by_face_voting(m, masked_views(m, 4, 32, 0, hair_all=True))
        visible = np.zeros(m.n_faces, bool)
        for v in masked_views(m, 4, 32, 0):
            fid, _ = raycast(m.vertices, m.faces, v.camera)
            visible[fid[fid >= 0]] = True
        assert np.all(out.face_labels[visible] == HAIR)
        assert np.all(out.face_labels[~visible] == CLOTHING)

    def test_hidden_face_is_clothing(self):
        a = icosphere(1)
        inner = icosphere(0, radius=0.3)
        m = TriMesh(np.r_[a.vertices, inner.vertices], np.r_[a.faces, inner.faces + a.n_vertices])
        out = segment_by_face_voting(m, masked_views(m, 4, 24, 1))
        assert np.all(out.face_labels[a.n_faces:] == CLOTHING)

    def test_view_permutation_invariant(self):
        m = icosphere(2)
        views = masked_views(m, 4, 24, 2)
        a = segment_by_face_voting(m, views).face_labels
        b = segment_by_face_voting(m, ViewSet(views.views[::-1])).face_labels
        np.testing.assert_array_equal(a, b)
        assert set(np.unique(a)) <= {FACE, HAIR, CLOTHING}

    def test_missing_masks(self):
        m = icosphere(0)
        with pytest.raises(ParameterError):
            segment_by_face_voting(m, ViewSet([View(orbit_camera(0, 0, 3))]))


class TestRigging:
    def test_centroid(self):
        m = icosphere(1)
        c = m.vertices[m.faces].mean(1)
        np.testing.assert_array_equal(nearest_faces(c, m.vertices, m.faces, np.arange(m.n_faces)),
                                      np.arange(m.n_faces))

    def test_tie_goes_to_lower_index(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 2], [1, 0, 2], [0, 1, 2]], float)
        f = np.array([[3, 4, 5], [0, 1, 2]])
        assert nearest_faces(np.array([[0.2, 0.2, 1.0]]), v, f, np.array([1, 0]))[0] == 0

    def test_matches_bruteforce_on_scalp(self, toy_rig):
        pts = np.random.default_rng(5).uniform(-1.2, 1.2, (1000, 3))
        got = nearest_face_rigging(pts, toy_rig, "scalp")
        expect = nearest_face_bruteforce(pts, toy_rig.template_vertices, toy_rig.faces,
                                         toy_rig.partition_faces("scalp"))
        np.testing.assert_array_equal(got, expect)

    def test_empty_partition(self, toy_rig):
        from dataclasses import replace
        rig = replace(toy_rig, face_partition=np.where(toy_rig.face_partition == 1, 0, toy_rig.face_partition))
        with pytest.raises(ParameterError):
            nearest_face_rigging(np.zeros((1, 3)), rig, "scalp")


class TestSampling:
    def test_single_triangle(self):
        m = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
        s = sample_surface_points(m, 500, seed=1)
        assert np.all(s.bary >= 0) and np.allclose(s.bary.sum(1), 1)
        assert np.all(s.points[:, :2] >= 0) and np.all(s.points[:, :2].sum(1) <= 1 + 1e-12)

    def test_area_ratio(self):
        m = TriMesh([[0, 0, 0], [3, 0, 0], [0, 3, 0], [10, 0, 0], [11, 0, 0], [10, 1, 0]],
                    [[0, 1, 2], [3, 4, 5]])
        n = 10_000
        s = sample_surface_points(m, n, seed=2)
        k = int(np.sum(s.faces == 0))
        assert abs(k - 0.9 * n) <= 3 * np.sqrt(n * 0.9 * 0.1)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_deterministic(self, seed):
        m = icosphere(1)
        a, b = sample_surface_points(m, 50, seed), sample_surface_points(m, 50, seed)
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.faces, b.faces)

    def test_zero_area(self):
        with pytest.raises(ParameterError):
            sample_surface_points(TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]]), 3)

    def test_bad_count(self):
        with pytest.raises(ParameterError):
            sample_surface_points(icosphere(0), 0)
