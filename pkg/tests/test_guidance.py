from __future__ import annotations

import socket
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avforge.errors import GuidanceTransportError, ParameterError
from avforge.guidance.bridge import (MAGIC, OP_ENCODE, BridgeClient, RemoteOracle, StubServer, echo_check,
                                     pack_frame, unpack_payload)
from avforge.guidance.bundle import Guidance
from avforge.guidance.ddim import (DELTA_T, ControlMaps, ddim_invert, ism_gradient, ism_latent_gradient, sdedit,
                                   sdedit_noise)
from avforge.guidance.oracles import AffineOracle, AvgPoolCodec, IdentityCodec, MapControlAdapter, TargetImageOracle
from avforge.guidance.schedule import NoiseSchedule

SCHED = NoiseSchedule.linear()


def scalar_inversion(z0, a, b, ab, path):
    """Per-element DDIM inversion for eps = a_t z + b_t, written as a plain scalar loop."""
    out = np.empty_like(z0)
    for idx, z in np.ndenumerate(z0):
        for tau, nxt in zip(path, path[1:]):
            e = a[tau] * z + b[tau]
            x0 = (z - np.sqrt(1 - ab[tau]) * e) / np.sqrt(ab[tau])
            z = np.sqrt(ab[nxt]) * x0 + np.sqrt(1 - ab[nxt]) * e
        out[idx] = z
    return out


class TestSchedule:
    def test_monotone(self):
        a = SCHED.alphas_cumprod
        assert a[0] <= 1 and a[-1] > 0 and np.all(np.diff(a) < 0) and SCHED.T == 1000

    def test_rejects_increasing(self):
        with pytest.raises(ParameterError):
            NoiseSchedule(np.array([0.5, 0.9]))


class TestInversion:
    def test_t_zero(self, rng):
        z = rng.normal(size=(4, 4, 3))
        np.testing.assert_array_equal(ddim_invert(AffineOracle(), z, 0, 50), z)

    def test_zero_predictor_rescales(self, rng):
        z = rng.normal(size=(4, 4, 3))
        out = ddim_invert(AffineOracle(0.0, 0.0), z, 500, 50)
        np.testing.assert_allclose(out, np.sqrt(SCHED.alpha_bar(500) / SCHED.alpha_bar(0)) * z, rtol=1e-12)

    def test_linear_stub_scalar_recurrence(self, rng):
        a = rng.uniform(-0.5, 0.5, SCHED.T)
        b = rng.uniform(-0.2, 0.2, SCHED.T)
        z = rng.normal(size=(3, 2))
        out = ddim_invert(AffineOracle(a, b), z, 300, 50)
        expect = scalar_inversion(z, a, b, SCHED.alphas_cumprod, list(range(0, 301, 50)))
        np.testing.assert_allclose(out, expect, rtol=1e-12, atol=1e-12)

    def test_unreachable(self):
        with pytest.raises(ParameterError):
            ddim_invert(AffineOracle(), np.zeros(3), 120, 50)


class TestISM:
    def test_delta_default(self):
        assert DELTA_T == 50
        assert Guidance(AffineOracle(), IdentityCodec()).delta_t == 50

    def test_identical_branches_cancel(self, rng):
        img = rng.uniform(size=(4, 4, 3))
        oracle = AffineOracle(0.3, 0.1)
        g = ism_gradient(img, oracle, IdentityCodec((4, 4, 3)), 400)
        assert np.all(g == 0.0)

    def test_requires_t_above_delta(self, rng):
        with pytest.raises(ParameterError):
            ism_gradient(np.zeros((4, 4, 3)), AffineOracle(), IdentityCodec((4, 4, 3)), 50)

    def test_closed_form_with_linear_stub(self, rng):
        a, b = rng.uniform(-0.5, 0.5, SCHED.T), rng.uniform(-0.2, 0.2, SCHED.T)
        au, bu = rng.uniform(-0.5, 0.5, SCHED.T), rng.uniform(-0.2, 0.2, SCHED.T)
        oracle = AffineOracle(a, b, au, bu)
        z0 = rng.normal(size=(4, 4, 3))
        t = 420
        path = [0] + list(range(20, t + 1, 50))
        zt = scalar_inversion(z0, au, bu, SCHED.alphas_cumprod, path)
        expect = (a[t] * zt + b[t]) - (au[t - 50] * zt + bu[t - 50])
        np.testing.assert_allclose(ism_latent_gradient(oracle, z0, t), expect, rtol=1e-10, atol=1e-12)
        zs = scalar_inversion(z0, au, bu, SCHED.alphas_cumprod, path[:-1])
        expect_i = (a[t] * zt + b[t]) - (au[t - 50] * zs + bu[t - 50])
        np.testing.assert_allclose(ism_latent_gradient(oracle, z0, t, mode="interval"), expect_i, atol=1e-12)

    @pytest.mark.parametrize("codec", [IdentityCodec((4, 4, 3)), AvgPoolCodec((8, 8, 3), 2)])
    def test_finite_differences(self, codec, rng):
        """FD of the potential <g, encode(I)> with g held at the base point (stop-gradient on z_t)."""
        oracle = AffineOracle(rng.uniform(-0.5, 0.5, SCHED.T), 0.05, rng.uniform(-0.5, 0.5, SCHED.T), -0.02)
        img = rng.uniform(size=codec.shape)
        g_lat = ism_latent_gradient(oracle, codec.encode(img), 300)
        grad = ism_gradient(img, oracle, codec, 300)
        phi = lambda x: float(np.sum(g_lat * codec.encode(x)))
        h = 1e-4
        for _ in range(3):
            v = rng.normal(size=img.shape)
            fd = (phi(img + h * v) - phi(img - h * v)) / (2 * h)
            an = float(np.sum(grad * v))
            assert abs(fd - an) <= 1e-3 * max(abs(fd), abs(an))

    @settings(max_examples=20, deadline=None)
    @given(st.floats(-3, 3), st.integers(60, 999))
    def test_linear_in_omega(self, omega, t):
        rng = np.random.default_rng(t)
        oracle = AffineOracle(0.2, 0.0, -0.1, 0.03)
        z = rng.normal(size=(4, 4, 3))
        g1 = ism_latent_gradient(oracle, z, t, omega=1.0)
        np.testing.assert_allclose(ism_latent_gradient(oracle, z, t, omega=omega), omega * g1, atol=1e-12)

    def test_control_changes_conditional_only(self, rng):
        oracle = AffineOracle(0.1, 0.0, control_gain=1.0)
        ctrl = ControlMaps(MapControlAdapter(), rng.normal(size=(4, 4, 3)), rng.integers(0, 11, (4, 4)))
        z = rng.normal(size=(4, 4, 3))
        g0 = ism_latent_gradient(oracle, z, 200)
        g1 = ism_latent_gradient(oracle, z, 200, control=ctrl)
        assert not np.any(g0) and np.any(g1)

    def test_stage_interval_clamp(self, rng):
        g = Guidance(AffineOracle(0.2, 0.0, -0.1, 0.0), IdentityCodec((4, 4, 3)))
        out = g.ism(rng.normal(size=(4, 4, 3)), 15)
        assert out.shape == (4, 4, 3) and np.all(np.isfinite(out))


class TestSDEdit:
    def test_strength_zero_identity(self, rng):
        img = rng.uniform(size=(8, 8, 3))
        out = sdedit(TargetImageOracle(np.zeros((8, 8, 3))), IdentityCodec((8, 8, 3)), img, strength=0.0)
        np.testing.assert_array_equal(out, img)

    def test_perfect_denoiser_reconstructs(self, rng):
        img = rng.uniform(size=(8, 8, 3))
        seed = 17
        xi = sdedit_noise(img.shape, seed)

        class Perfect:
            schedule = SCHED

            def predict_noise(self, z, t, text=None, control=None):
                return xi

        for s in (0.3, 0.9, 1.0):
            out = sdedit(Perfect(), IdentityCodec((8, 8, 3)), img, strength=s, seed=seed)
            np.testing.assert_allclose(out, img, atol=1e-5)

    def test_target_oracle_strength_one(self, rng):
        target = rng.uniform(size=(8, 8, 3))
        out = sdedit(TargetImageOracle(target), IdentityCodec((8, 8, 3)), rng.uniform(size=(8, 8, 3)),
                     strength=1.0, seed=3, cfg_scale=1.0)
        np.testing.assert_allclose(out, target, atol=1e-4)
        out_t = sdedit(TargetImageOracle(target, unconditional="target"), IdentityCodec((8, 8, 3)),
                       rng.uniform(size=(8, 8, 3)), strength=1.0, seed=3)
        np.testing.assert_allclose(out_t, target, atol=1e-4)

    @pytest.mark.parametrize("s1,s2", [(0.1, 0.3), (0.3, 0.6), (0.6, 0.9), (0.2, 1.0)])
    def test_weaker_edit_stays_closer(self, s1, s2, rng):
        target = rng.uniform(size=(8, 8, 3))
        img = rng.uniform(size=(8, 8, 3))
        oracle = TargetImageOracle(target, spread=0.3)
        codec = IdentityCodec((8, 8, 3))
        d = [np.linalg.norm(sdedit(oracle, codec, img, strength=s, seed=5, cfg_scale=1.0) - img) for s in (s1, s2)]
        assert d[0] < d[1]

    def test_bad_strength(self):
        with pytest.raises(ParameterError):
            sdedit(AffineOracle(), IdentityCodec((2, 2, 3)), np.zeros((2, 2, 3)), strength=1.5)

    def test_deterministic(self, rng):
        img = rng.uniform(size=(8, 8, 3))
        oracle = TargetImageOracle(np.ones((8, 8, 3)) * 0.5, spread=0.3)
        a = sdedit(oracle, IdentityCodec((8, 8, 3)), img, strength=0.5, seed=9)
        b = sdedit(oracle, IdentityCodec((8, 8, 3)), img, strength=0.5, seed=9)
        np.testing.assert_array_equal(a, b)


class TestCodecs:
    def test_identity_round_trip(self, rng):
        x = rng.uniform(size=(64, 64, 3))
        c = IdentityCodec()
        np.testing.assert_array_equal(c.decode(c.encode(x)), x)

    def test_avgpool_vjp(self, rng):
        c = AvgPoolCodec((8, 8, 3), 4)
        x = rng.uniform(size=(8, 8, 3))
        g = rng.normal(size=c.latent_shape)
        v = rng.normal(size=x.shape)
        assert float(np.sum(g * c.encode(v))) == pytest.approx(float(np.sum(c.encode_vjp(x, g) * v)))

    def test_shape_check(self):
        with pytest.raises(ParameterError):
            IdentityCodec((4, 4, 3)).encode(np.zeros((3, 3, 3)))


class TestBridge:
    def test_frame_round_trip(self, rng):
        t = [rng.normal(size=(2, 3)).astype("<f4"), rng.normal(size=(4,)).astype("<f4")]
        frame = pack_frame(1, {"t": 5}, t)
        magic, version, op, n = struct.unpack("<IIII", frame[:16])
        assert (magic, version, op, n) == (MAGIC, 1, 1, len(frame) - 16)
        meta, out = unpack_payload(frame[16:])
        assert meta["t"] == 5
        for a, b in zip(t, out):
            assert a.tobytes() == b.tobytes()

    def test_truncated_payload(self):
        frame = pack_frame(1, {}, [np.zeros(4, "<f4")])
        with pytest.raises(GuidanceTransportError):
            unpack_payload(frame[16:-2])

    def test_stub_server_round_trip(self, rng):
        target = rng.uniform(size=(8, 8, 3))
        local = TargetImageOracle(target, spread=0.3)
        with StubServer(local, IdentityCodec((8, 8, 3)), MapControlAdapter()) as server:
            host, port = server.address
            assert echo_check(host, port)
            with BridgeClient(host, port, timeout=5) as client:
                remote = RemoteOracle(client)
                z = rng.normal(size=(8, 8, 3))
                np.testing.assert_allclose(remote.predict_noise(z, 300, "x"),
                                           local.predict_noise(z.astype("<f4").astype(float), 300, "x"),
                                           rtol=1e-5, atol=1e-5)
                ctrl = remote.control(z, 10, "x", rng.normal(size=(8, 8, 3)), np.ones((8, 8)))
                assert ctrl.shape == z.shape
                with pytest.raises(GuidanceTransportError, match="backend error"):
                    remote.encode(np.zeros((3, 3, 3)))

    def test_connection_refused(self):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
        s.close()
        with pytest.raises(GuidanceTransportError):
            BridgeClient("127.0.0.1", port, timeout=1)

    def test_bad_magic_reply(self):
        listener = socket.socket()
        listener.bind(("127.0.0.1", 0))
        listener.listen(1)
        import threading

        def serve():
            conn, _ = listener.accept()
            conn.recv(1 << 16)
            conn.sendall(struct.pack("<IIII", 0xDEADBEEF, 1, OP_ENCODE | 0x80000000, 0))
            conn.close()
        th = threading.Thread(target=serve, daemon=True)
        th.start()
        with BridgeClient(*listener.getsockname(), timeout=2) as client:
            with pytest.raises(GuidanceTransportError, match="magic"):
                client.call(OP_ENCODE, {}, [np.zeros(2, "<f4")])
        th.join(2)
        listener.close()

    def test_timeout(self):
        listener = socket.socket()
        listener.bind(("127.0.0.1", 0))
        listener.listen(1)
        with BridgeClient(*listener.getsockname(), timeout=0.3) as client:
            with pytest.raises(GuidanceTransportError, match="timed out"):
                client.call(OP_ENCODE, {}, [np.zeros(2, "<f4")])
        listener.close()
