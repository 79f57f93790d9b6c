from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avforge.camera import look_at, orbit_camera
from avforge.errors import ParameterError
from avforge.geometry import quat_identity, quat_normalize, quat_to_matrix, rigid_matrix
from avforge.gsplat.cloud import (GaussianCloud, WorldSplats, compute_face_frames, globalize, globalize_backward,
                                  init_teeth_colors, logit, prune, reg_position, reg_scale)
from avforge.gsplat.init import allocate_counts, build_initial_cloud, knn_scale
from avforge.gsplat.rasterize import rasterize, rasterize_backward
from avforge.rig.model import PARTITION_NAMES, RigParams, deform
from oracles.splat import composite
from splat_scenes import BACKGROUND, random_scene, replaced, splat_fd_errors


def random_cloud(rng, n, n_faces):
    return GaussianCloud(rng.normal(size=(n, 3)) * 0.5, quat_normalize(rng.normal(size=(n, 4))),
                         rng.normal(size=(n, 3)) - 1, rng.normal(size=n), rng.uniform(size=(n, 3)),
                         rng.integers(0, n_faces, n))


def random_rigid(rng):
    return rigid_matrix(quat_to_matrix(quat_normalize(rng.normal(size=4))), rng.uniform(-1, 1, 3))


class TestFaceFrames:
    def test_equilateral_normal(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]])
        fr = compute_face_frames(v, [[0, 1, 2]])
        np.testing.assert_allclose(fr.rotation[0][:, 2], [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(fr.rotation[0] @ fr.rotation[0].T, np.eye(3), atol=1e-12)

    def test_345_scale(self):
        fr = compute_face_frames(np.array([[0, 0, 0], [3, 0, 0], [0, 4, 0]], float), [[0, 1, 2]])
        assert fr.scale[0] == pytest.approx(4.0)

    def test_degenerate(self):
        with pytest.raises(ParameterError, match="face 1"):
            compute_face_frames(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], float),
                                [[0, 1, 2], [0, 1, 3]])

    def test_rigid_equivariance(self, rng):
        v = rng.normal(size=(6, 3))
        f = np.array([[0, 1, 2], [3, 4, 5]])
        T = random_rigid(rng)
        a = compute_face_frames(v, f)
        b = compute_face_frames(v @ T[:3, :3].T + T[:3, 3], f)
        np.testing.assert_allclose(b.rotation, T[:3, :3] @ a.rotation, atol=1e-12)
        np.testing.assert_allclose(b.centroid, a.centroid @ T[:3, :3].T + T[:3, 3], atol=1e-12)
        np.testing.assert_allclose(b.scale, a.scale, atol=1e-12)


class TestGlobalize:
    def test_identity_frame(self, rng):
        c = random_cloud(rng, 10, 1)
        from avforge.gsplat.cloud import FaceFrames
        fr = FaceFrames(np.eye(3)[None], np.zeros((1, 3)), np.ones(1))
        w = globalize(c, fr)
        np.testing.assert_allclose(w.position, c.local_position)
        np.testing.assert_allclose(w.rotation, c.local_rotation, atol=1e-12)
        np.testing.assert_allclose(w.scale, np.exp(c.log_scale))
        np.testing.assert_allclose(w.opacity, 1 / (1 + np.exp(-c.opacity_logit)))

    def test_frame_scale_two(self, rng):
        from avforge.gsplat.cloud import FaceFrames
        c = random_cloud(rng, 10, 1)
        a = globalize(c, FaceFrames(np.eye(3)[None], np.zeros((1, 3)), np.ones(1)))
        b = globalize(c, FaceFrames(np.eye(3)[None], np.zeros((1, 3)), np.full(1, 2.0)))
        np.testing.assert_allclose(b.scale, 2 * a.scale)
        np.testing.assert_allclose(b.position, 2 * a.position)

    def test_missing_frame(self, rng):
        c = random_cloud(rng, 4, 5)
        fr = compute_face_frames(rng.normal(size=(3, 3)), [[0, 1, 2]])
        with pytest.raises(ParameterError):
            globalize(c, fr)

    def test_rigid_motion(self, toy_rig, rng):
        cloud = build_initial_cloud(toy_rig, 300, seed=1)
        cloud.local_rotation = quat_normalize(rng.normal(size=(cloud.count, 4)))
        for _ in range(3):
            T = random_rigid(rng)
            base = deform(toy_rig, RigParams.neutral(toy_rig))
            moved = deform(toy_rig, RigParams.neutral(toy_rig).copy(global_transform=T))
            a = globalize(cloud, compute_face_frames(base.vertices, base.faces))
            b = globalize(cloud, compute_face_frames(moved.vertices, moved.faces))
            np.testing.assert_allclose(b.position, a.position @ T[:3, :3].T + T[:3, 3], atol=1e-5)
            Ra, Rb = quat_to_matrix(a.rotation), quat_to_matrix(b.rotation)
            np.testing.assert_allclose(Rb, T[:3, :3] @ Ra, atol=1e-5)

    def test_backward_fd(self, rng):
        v = rng.normal(size=(6, 3))
        fr = compute_face_frames(v, np.array([[0, 1, 2], [3, 4, 5]]))
        c = random_cloud(rng, 7, 2)
        g = WorldSplats(*(rng.normal(size=a.shape) for a in (np.zeros((7, 3)), np.zeros((7, 4)), np.zeros((7, 3)),
                                                             np.zeros(7), np.zeros((7, 3)))))
        grads = globalize_backward(c, fr, g)

        def f(cc):
            w = globalize(cc, fr)
            return sum(float(np.sum(getattr(w, k) * getattr(g, k))) for k in
                       ("position", "rotation", "log_scale", "opacity_logit", "color"))
        h = 1e-6
        for name, arr in c.params().items():
            d = rng.normal(size=arr.shape)
            cp, cm = c.copy(), c.copy()
            setattr(cp, name, arr + h * d)
            setattr(cm, name, arr - h * d)
            fd = (f(cp) - f(cm)) / (2 * h)
            assert fd == pytest.approx(float(np.sum(grads[name] * d)), rel=1e-6, abs=1e-8)


class TestRasterize:
    def test_zero_splats(self):
        cam = look_at((0, 0, 3), (0, 0, 0), width=8, height=8)
        img = rasterize(WorldSplats.empty(), cam, background=(0.1, 0.2, 0.3))
        assert np.all(img.rgb == np.array([0.1, 0.2, 0.3])) and not img.alpha.any()

    def test_single_splat_on_axis(self):
        cam = look_at((0, 0, 3), (0, 0, 0), width=33, height=33)
        w = WorldSplats(np.zeros((1, 3)), quat_identity(1), np.log(np.full((1, 3), 0.1)), np.array([10.0]),
                        np.array([[0.9, 0.2, 0.4]]))
        img = rasterize(w, cam)
        i, j = np.unravel_index(np.argmax(img.alpha), img.alpha.shape)
        assert (i + 0.5, j + 0.5) == (cam.cy, cam.cx)
        np.testing.assert_allclose(img.rgb[i, j], [0.9, 0.2, 0.4], atol=1 / 255)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_bruteforce(self, seed):
        world, cam, _ = random_scene(seed, n=20, res=32)
        img = rasterize(world, cam, BACKGROUND)
        rgb, alpha, _ = composite(world, cam, BACKGROUND)
        np.testing.assert_allclose(img.rgb, rgb, atol=1e-5)
        np.testing.assert_allclose(img.alpha, alpha, atol=1e-5)

    def test_non_finite(self):
        w = WorldSplats(np.array([[0, 0, 0], [np.nan, 0, 0]], float), quat_identity(2), np.zeros((2, 3)),
                        np.zeros(2), np.zeros((2, 3)))
        with pytest.raises(ParameterError, match="splat 1"):
            rasterize(w, look_at((0, 0, 3), (0, 0, 0)))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_adding_splat_never_decreases_alpha(self, seed):
        world, cam, rng = random_scene(seed, n=6, res=16)
        a = rasterize(world, cam).alpha
        more = WorldSplats.concatenate([world, WorldSplats(rng.uniform(-0.4, 0.4, (1, 3)),
                                                           quat_normalize(rng.normal(size=(1, 4))),
                                                           np.log(rng.uniform(0.05, 0.3, (1, 3))),
                                                           rng.normal(size=1), rng.uniform(size=(1, 3)))])
        b = rasterize(more, cam).alpha
        assert np.all(a >= 0) and np.all(a <= 1) and np.all(b >= a - 1e-15)

    def test_equal_depth_tie_by_index(self):
        cam = look_at((0, 0, 3), (0, 0, 0), width=9, height=9)
        base = WorldSplats(np.zeros((2, 3)), quat_identity(2), np.log(np.full((2, 3), 0.2)), np.array([2.0, 2.0]),
                           np.array([[1.0, 0, 0], [0, 0, 1.0]]))
        swapped = WorldSplats(base.position, base.rotation, base.log_scale, base.opacity_logit, base.color[::-1])
        a, b = rasterize(base, cam).rgb[4, 4], rasterize(swapped, cam).rgb[4, 4]
        assert a[0] > a[2] and b[2] > b[0]

    def test_deterministic(self):
        world, cam, _ = random_scene(3, n=30, res=24)
        a, b = rasterize(world, cam), rasterize(world, cam)
        np.testing.assert_array_equal(a.rgb, b.rgb)

    def test_render_rigid_equivariance(self, toy_rig, rng):
        cloud = build_initial_cloud(toy_rig, 400, seed=2)
        cam = orbit_camera(20, 10, 3.2, width=32, height=32)
        base = deform(toy_rig, RigParams.neutral(toy_rig))
        ref = rasterize(globalize(cloud, compute_face_frames(base.vertices, base.faces)), cam)
        for _ in range(3):
            T = random_rigid(rng)
            moved = deform(toy_rig, RigParams.neutral(toy_rig).copy(global_transform=T))
            img = rasterize(globalize(cloud, compute_face_frames(moved.vertices, moved.faces)), cam.transformed(T))
            np.testing.assert_allclose(img.rgb, ref.rgb, atol=1e-5)


class TestBackward:
    def test_zero_upstream(self):
        world, cam, _ = random_scene(0)
        g = rasterize_backward(world, cam, np.zeros((16, 16, 3)))
        for k in ("position", "rotation", "log_scale", "opacity_logit", "color"):
            assert not getattr(g, k).any()

    def test_l2_at_optimum(self):
        world, cam, _ = random_scene(1, n=1)
        img = rasterize(world, cam)
        g = rasterize_backward(world, cam, 2 * (img.rgb - img.rgb))
        assert max(np.abs(getattr(g, k)).max() for k in ("position", "log_scale", "color")) <= 1e-8

    def test_shape_mismatch(self):
        world, cam, _ = random_scene(0)
        with pytest.raises(ParameterError):
            rasterize_backward(world, cam, np.zeros((8, 8, 3)))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_finite_differences(self, seed):
        errors = splat_fd_errors(seed)
        assert max(errors.values()) <= 1e-2, errors

    def test_unfrozen_fd_agrees_without_support_change(self):
        world, cam, rng = random_scene(7)
        g_rgb = rng.normal(size=(16, 16, 3))
        grads = rasterize_backward(world, cam, g_rgb)
        v = rng.normal(size=world.color.shape)
        h = 1e-4
        f = lambda w: float(np.sum(rasterize(w, cam).rgb * g_rgb))
        fd = (f(replaced(world, "color", world.color + h * v)) - f(replaced(world, "color", world.color - h * v))) / (2 * h)
        assert fd == pytest.approx(float(np.sum(grads.color * v)), rel=1e-6)


class TestRegularizers:
    def cloud_with_scales(self, s):
        s = np.atleast_2d(s)
        n = len(s)
        return GaussianCloud(np.zeros((n, 3)), quat_identity(n), np.log(s), np.zeros(n), np.zeros((n, 3)),
                             np.zeros(n, int))

    def test_below_threshold(self):
        loss, g = reg_scale(self.cloud_with_scales(np.full((4, 3), 0.1)))
        assert loss == 0.0 and not g.any()

    def test_one_axis_over(self):
        loss, _ = reg_scale(self.cloud_with_scales([[0.3, 0.1, 0.1]]))
        assert loss == pytest.approx(1e4 * 0.1 / 3)

    def test_weight_zero(self):
        assert reg_scale(self.cloud_with_scales([[0.9, 0.9, 0.9]]), weight=0.0)[0] == 0.0

    def test_defaults(self):
        import inspect
        sig = inspect.signature(reg_scale).parameters
        assert (sig["threshold"].default, sig["weight"].default) == (0.2, 1e4)
        assert inspect.signature(reg_position).parameters["threshold"].default == 1.0

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(1e-3, 0.6), min_size=3, max_size=30).filter(lambda x: len(x) % 3 == 0))
    def test_zero_iff_all_below(self, scales):
        s = np.array(scales).reshape(-1, 3)
        loss, _ = reg_scale(self.cloud_with_scales(s))
        if np.all(s < 0.2):
            assert loss == 0.0
        if np.any(s > 0.2 + 1e-9):
            assert loss > 0.0

    def test_position(self):
        c = self.cloud_with_scales([[0.1, 0.1, 0.1]])
        assert reg_position(c, weight=1e5)[0] == 0.0
        c.local_position = np.array([[0.0, 2.0, 0.0]])
        assert reg_position(c, weight=1e5)[0] == pytest.approx(1e5)
        assert reg_position(c, weight=1e-2)[0] == pytest.approx(1e-2)

    def test_gradients_fd(self, rng):
        c = random_cloud(rng, 6, 1)
        c.log_scale = np.log(rng.uniform(0.05, 0.5, (6, 3)))
        c.local_position = rng.normal(size=(6, 3))
        h = 1e-6
        for fn, name in ((reg_scale, "log_scale"), (reg_position, "local_position")):
            _, g = fn(c)
            d = rng.normal(size=g.shape)
            cp, cm = c.copy(), c.copy()
            setattr(cp, name, getattr(c, name) + h * d)
            setattr(cm, name, getattr(c, name) - h * d)
            fd = (fn(cp)[0] - fn(cm)[0]) / (2 * h)
            assert fd == pytest.approx(float(np.sum(g * d)), rel=1e-5)


class TestPruneAndTeeth:
    def test_prune(self, rng):
        c = random_cloud(rng, 50, 3)
        assert prune(c, 0.0).count == 50
        assert prune(c, 1.0).count == 0
        out = prune(c, 0.5)
        keep = 1 / (1 + np.exp(-c.opacity_logit)) >= 0.5
        np.testing.assert_array_equal(out.binding, c.binding[keep])
        np.testing.assert_array_equal(out.color, c.color[keep])

    def test_teeth_colors(self, toy_rig):
        fp = toy_rig.face_partition
        faces = [int(np.flatnonzero(fp == PARTITION_NAMES.index(n))[0])
                 for n in ("teeth_upper", "mouth_interior", "face")]
        c = GaussianCloud(np.zeros((3, 3)), quat_identity(3), np.zeros((3, 3)), np.zeros(3),
                          np.full((3, 3), 0.3), faces)
        out = init_teeth_colors(c, fp, PARTITION_NAMES)
        np.testing.assert_allclose(out.color[0], [0.5553, 0.5247, 0.4800], atol=1e-4)
        np.testing.assert_allclose(out.color[1], [0.2510, 0.1196, 0.1157], atol=1e-4)
        np.testing.assert_array_equal(out.color[2], [0.3, 0.3, 0.3])
        np.testing.assert_array_equal(c.color, 0.3)

    def test_no_teeth_splats(self, toy_rig):
        c = GaussianCloud(np.zeros((1, 3)), quat_identity(1), np.zeros((1, 3)), np.zeros(1), np.zeros((1, 3)), [0])
        with pytest.raises(ParameterError):
            init_teeth_colors(c, np.zeros(10, int), PARTITION_NAMES)


class TestInitialCloud:
    def test_allocate_counts(self):
        counts = allocate_counts([3.0, 1.0, 0.01], 100)
        assert counts.sum() == 100 and counts.min() >= 1 and counts[0] > counts[1]

    def test_knn_scale(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0], [6, 0, 0]], float)
        np.testing.assert_allclose(knn_scale(pts, 1), [1, 1, 2, 3])

    def test_build(self, toy_rig):
        c = build_initial_cloud(toy_rig, 500, seed=3)
        assert c.count == 500
        c.validate(toy_rig.n_faces)
        np.testing.assert_allclose(c.opacity, 0.1)
        np.testing.assert_allclose(c.local_rotation, quat_identity(500))
        # samples lie on their binding face: zero normal offset in the local frame
        assert np.abs(c.local_position[:, 2]).max() < 1e-9

    def test_deterministic(self, toy_rig):
        a, b = build_initial_cloud(toy_rig, 200, seed=4), build_initial_cloud(toy_rig, 200, seed=4)
        np.testing.assert_array_equal(a.local_position, b.local_position)

    def test_logit_round_trip(self):
        assert 1 / (1 + np.exp(-logit(0.1))) == pytest.approx(0.1)
