"""Byte-stream bridge to an external denoiser backend.

Frame layout (little-endian):
    u32 magic 0x47554944 | u32 version 1 | u32 op | u32 payload_len | payload
payload = one JSON line (metadata, including ``"shapes"`` of the tensors) + b"\\n"
          + the tensors as raw float32, C order, in the declared order.
Ops: 1 predict_noise, 2 encode, 3 decode, 4 control. A response carries the
request op with the high bit set and ``{"ok": true}`` or ``{"ok": false, "error": ...}``.
"""

from __future__ import annotations

import json
import logging
import socket
import struct
import threading

import numpy as np

from ..errors import GuidanceTransportError
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

MAGIC = 0x47554944
VERSION = 1
OP_PREDICT, OP_ENCODE, OP_DECODE, OP_CONTROL = 1, 2, 3, 4
RESPONSE_BIT = 0x80000000
HEADER = struct.Struct("<IIII")
MAX_PAYLOAD = 1 << 30


def pack_frame(op: int, meta: dict, tensors=()) -> bytes:
    arrays = [np.ascontiguousarray(t, dtype="<f4") for t in tensors]
    meta = dict(meta, shapes=[list(a.shape) for a in arrays])
    payload = json.dumps(meta, sort_keys=True).encode() + b"\n" + b"".join(a.tobytes() for a in arrays)
    return HEADER.pack(MAGIC, VERSION, op, len(payload)) + payload


def unpack_payload(payload: bytes):
    """Split a payload into (meta, tensors)."""
    nl = payload.find(b"\n")
    if nl < 0:
        raise GuidanceTransportError("malformed frame: no metadata line")
    try:
        meta = json.loads(payload[:nl])
    except json.JSONDecodeError as exc:
        raise GuidanceTransportError(f"malformed frame metadata: {exc}") from exc
    if not isinstance(meta, dict):
        raise GuidanceTransportError("malformed frame metadata: not an object")
    body = payload[nl + 1:]
    tensors, off = [], 0
    for shape in meta.get("shapes", []):
        n = int(np.prod(shape)) * 4
        if off + n > len(body):
            raise GuidanceTransportError("malformed frame: tensor data truncated")
        tensors.append(np.frombuffer(body, dtype="<f4", count=n // 4, offset=off).reshape(shape).copy())
        off += n
    if off != len(body):
        raise GuidanceTransportError("malformed frame: trailing bytes after tensors")
    return meta, tensors


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks, got = [], 0
    while got < n:
        try:
            chunk = sock.recv(min(n - got, 1 << 20))
        except socket.timeout as exc:
            raise GuidanceTransportError("timed out waiting for the guidance backend") from exc
        except OSError as exc:
            raise GuidanceTransportError(f"connection error: {exc}") from exc
        if not chunk:
            raise GuidanceTransportError("connection closed mid-frame" if got else "connection closed")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket):
    magic, version, op, length = HEADER.unpack(_recv_exact(sock, HEADER.size))
    if magic != MAGIC:
        raise GuidanceTransportError(f"bad magic 0x{magic:08x}")
    if version != VERSION:
        raise GuidanceTransportError(f"unsupported protocol version {version}")
    if length > MAX_PAYLOAD:
        raise GuidanceTransportError(f"payload length {length} exceeds limit")
    meta, tensors = unpack_payload(_recv_exact(sock, length))
    return op, meta, tensors


class BridgeClient:
    """One connection to a backend; calls are serialized."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, timeout: float = 30.0):
        self.address = (host, port)
        self.timeout = timeout
        self._lock = threading.Lock()
        try:
            self.sock = socket.create_connection(self.address, timeout=timeout)
        except OSError as exc:
            raise GuidanceTransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        self.sock.settimeout(timeout)

    def call(self, op: int, meta: dict, tensors=()):
        with self._lock:
            try:
                self.sock.sendall(pack_frame(op, meta, tensors))
            except OSError as exc:
                raise GuidanceTransportError(f"send failed: {exc}") from exc
            rop, rmeta, rtensors = read_frame(self.sock)
        if rop != (op | RESPONSE_BIT):
            raise GuidanceTransportError(f"response op 0x{rop:08x} does not answer op {op}")
        if not rmeta.get("ok", False):
            raise GuidanceTransportError(f"backend error: {rmeta.get('error', 'unknown')}")
        return rmeta, rtensors

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class RemoteOracle:
    """Oracle, codec and control adapter backed by a bridge connection.

    The noise schedule is shared configuration; it is not sent over the wire.
    """

    reentrant = False

    def __init__(self, client: BridgeClient, schedule: NoiseSchedule | None = None):
        self.client = client
        self.schedule = schedule or NoiseSchedule.linear()

    def predict_noise(self, z, t, text=None, control=None):
        tensors = [z] if control is None else [z, control]
        _, out = self.client.call(OP_PREDICT, {"t": int(t), "text": text, "has_control": control is not None},
                                  tensors)
        return self._single(out, np.shape(z)).astype(np.float64)

    def encode(self, image):
        return self._single(self.client.call(OP_ENCODE, {}, [image])[1]).astype(np.float64)

    def decode(self, z):
        return self._single(self.client.call(OP_DECODE, {}, [z])[1]).astype(np.float64)

    def encode_vjp(self, image, grad_z):
        raise GuidanceTransportError("the bridge protocol carries no encoder vector-Jacobian product")

    def control(self, z, t, text, normal, segmentation):
        _, out = self.client.call(OP_CONTROL, {"t": int(t), "text": text},
                                  [z, normal, np.asarray(segmentation, dtype=np.float32)])
        return self._single(out, np.shape(z)).astype(np.float64)

    @staticmethod
    def _single(tensors, shape=None):
        if len(tensors) != 1:
            raise GuidanceTransportError(f"expected one tensor in response, got {len(tensors)}")
        if shape is not None and tuple(tensors[0].shape) != tuple(shape):
            raise GuidanceTransportError(f"response shape {tensors[0].shape} != {tuple(shape)}")
        return tensors[0]


class StubServer:
    """Serves a local oracle/codec/adapter over the bridge protocol, one connection at a time."""

    def __init__(self, oracle, codec, adapter=None, host: str = "127.0.0.1", port: int = 0):
        self.oracle, self.codec, self.adapter = oracle, codec, adapter
        self.listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.listener.bind((host, port))
        self.listener.listen(1)
        self.address = self.listener.getsockname()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def handle(self, op: int, meta: dict, tensors):
        if op == OP_PREDICT:
            control = tensors[1] if meta.get("has_control") and len(tensors) > 1 else None
            return [self.oracle.predict_noise(tensors[0].astype(np.float64), int(meta["t"]), meta.get("text"),
                                              None if control is None else control.astype(np.float64))]
        if op == OP_ENCODE:
            return [self.codec.encode(tensors[0].astype(np.float64))]
        if op == OP_DECODE:
            return [self.codec.decode(tensors[0].astype(np.float64))]
        if op == OP_CONTROL:
            if self.adapter is None:
                raise ValueError("this server has no control adapter")
            z, normal, seg = tensors
            return [self.adapter.control(z.astype(np.float64), int(meta["t"]), meta.get("text"),
                                         normal.astype(np.float64), seg.astype(np.int64))]
        raise ValueError(f"unknown op {op}")

    def serve_connection(self, conn: socket.socket) -> None:
        with conn:
            while not self._stop.is_set():
                try:
                    op, meta, tensors = read_frame(conn)
                except GuidanceTransportError as exc:
                    if str(exc) != "connection closed":
                        log.warning("dropping connection: %s", exc)
                    return
                try:
                    out, reply = self.handle(op, meta, tensors), {"ok": True}
                except Exception as exc:  # reported to the client, server keeps running
                    out, reply = [], {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
                conn.sendall(pack_frame(op | RESPONSE_BIT, reply, out))

    def serve_forever(self, max_connections: int | None = None) -> None:
        served = 0
        self.listener.settimeout(0.2)
        while not self._stop.is_set() and (max_connections is None or served < max_connections):
            try:
                conn, _ = self.listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.settimeout(None)
            self.serve_connection(conn)
            served += 1

    def start(self) -> "StubServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self.listener.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def echo_check(host: str, port: int, shape=(8, 8, 3), seed: int = 0, timeout: float = 10.0) -> bool:
    """Round-trip a random tensor through the backend's encode op; True if bit-exact."""
    data = np.random.default_rng(seed).standard_normal(shape).astype("<f4")
    with BridgeClient(host, port, timeout) as client:
        _, out = client.call(OP_ENCODE, {}, [data])
    return len(out) == 1 and out[0].shape == data.shape and out[0].tobytes() == data.tobytes()
