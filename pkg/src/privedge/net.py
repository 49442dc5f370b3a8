"""Wire protocol, channels and session management.

Frame layout (all integers little-endian)::

    length   u32   = 25 + len(payload)  (covers type + session + seq + payload)
    type     u8
    session  u128
    seq      u64   strictly increasing from 0, per session per direction
    payload  bytes

Every payload body carries a trailing CRC32 so that a corrupted frame is
detected and turned into an abort rather than a wrong result. Message
types:

    0x00 handshake   0x01 share-tensor   0x02 masked-open
    0x03 garbled     0x04 ot-msg         0x05 result
    0x06 request     0x0F abort

Tensor encoding inside bodies: k u8, f u8, rank u8, dims u32*rank,
words u64*numel.

Transports are reliable ordered byte/frame streams: an in-process queue
pair for tests and single-process deployments, or TCP. Concurrent
sub-sessions use separate links, one per session id.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ChannelError,
    DecodeError,
    ManifestMismatch,
    ParamsMismatch,
    ProtocolAborted,
    SequenceGap,
    VersionMismatch,
)
from .fixedpoint import RingParams
from .sharing import ShareTensor

PROTOCOL_VERSION = 1

MSG_HANDSHAKE = 0x00
MSG_SHARE_TENSOR = 0x01
MSG_MASKED_OPEN = 0x02
MSG_GARBLED = 0x03
MSG_OT = 0x04
MSG_RESULT = 0x05
MSG_REQUEST = 0x06
MSG_ABORT = 0x0F

FRAME_HEADER_LEN = 4 + 1 + 16 + 8  # length + type + session + seq
DEFAULT_TIMEOUT = 20.0


# ---------------------------------------------------------------------------
# links: framed transports


class Link:
    """A reliable ordered frame pipe with byte accounting."""

    def __init__(self):
        self.bytes_sent = 0
        self.frames_sent = 0
        self.bytes_received = 0
        self.frames_received = 0

    def send_frame(self, frame: bytes):
        raise NotImplementedError

    def recv_frame(self, timeout: float) -> bytes:
        raise NotImplementedError

    def close(self):
        pass


class QueueLink(Link):
    """One endpoint of an in-process frame pipe."""

    def __init__(self, tx: queue.Queue, rx: queue.Queue):
        super().__init__()
        self._tx = tx
        self._rx = rx

    @staticmethod
    def pair() -> tuple["QueueLink", "QueueLink"]:
        a, b = queue.Queue(), queue.Queue()
        return QueueLink(a, b), QueueLink(b, a)

    def send_frame(self, frame: bytes):
        self.bytes_sent += len(frame)
        self.frames_sent += 1
        self._tx.put(frame)

    def recv_frame(self, timeout: float) -> bytes:
        try:
            frame = self._rx.get(timeout=timeout)
        except queue.Empty:
            raise ChannelError("timed out waiting for peer frame")
        self.bytes_received += len(frame)
        self.frames_received += 1
        return frame


class TcpLink(Link):
    """Frame pipe over a connected TCP socket."""

    def __init__(self, sock: socket.socket):
        super().__init__()
        self._sock = sock
        self._send_lock = threading.Lock()

    def send_frame(self, frame: bytes):
        with self._send_lock:
            try:
                self._sock.sendall(frame)
            except OSError as exc:
                raise ChannelError(f"send failed: {exc}") from exc
        self.bytes_sent += len(frame)
        self.frames_sent += 1

    def _recv_exact(self, n: int, timeout: float) -> bytes:
        self._sock.settimeout(timeout)
        chunks = []
        got = 0
        while got < n:
            try:
                chunk = self._sock.recv(n - got)
            except socket.timeout:
                raise ChannelError("timed out waiting for peer bytes")
            except OSError as exc:
                raise ChannelError(f"recv failed: {exc}") from exc
            if not chunk:
                raise ChannelError("connection closed by peer")
            chunks.append(chunk)
            got += len(chunk)
        return b"".join(chunks)

    def recv_frame(self, timeout: float) -> bytes:
        head = self._recv_exact(4, timeout)
        (length,) = struct.unpack("<I", head)
        if length < FRAME_HEADER_LEN - 4 or length > 1 << 30:
            raise DecodeError(f"implausible frame length {length}")
        rest = self._recv_exact(length, timeout)
        frame = head + rest
        self.bytes_received += len(frame)
        self.frames_received += 1
        return frame

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


class FaultyLink(Link):
    """Wrapper that injects frame-level faults on the send side.

    The fault plan is a callable(frame_index) -> action in
    {"ok", "drop", "dup", "hold", "flip"}; "hold" delays the frame until
    after the next one (a reorder).
    """

    def __init__(self, inner: Link, plan, rng):
        super().__init__()
        self._inner = inner
        self._plan = plan
        self._rng = rng
        self._held: bytes | None = None
        self._index = 0

    def _emit(self, frame: bytes):
        self._inner.send_frame(frame)

    def send_frame(self, frame: bytes):
        action = self._plan(self._index)
        self._index += 1
        if action == "drop":
            pass
        elif action == "dup":
            self._emit(frame)
            self._emit(frame)
        elif action == "hold":
            if self._held is not None:
                self._emit(self._held)
            self._held = frame
            return
        elif action == "flip":
            mutated = bytearray(frame)
            pos = int(self._rng.randbelow(len(mutated)))
            mutated[pos] ^= 1 << int(self._rng.randbelow(8))
            self._emit(bytes(mutated))
        else:
            self._emit(frame)
        if self._held is not None:
            held, self._held = self._held, None
            self._emit(held)

    def recv_frame(self, timeout: float) -> bytes:
        return self._inner.recv_frame(timeout)

    def close(self):
        self._inner.close()


# ---------------------------------------------------------------------------
# payload codecs


def encode_tensor(data: np.ndarray, params: RingParams) -> bytes:
    arr = np.ascontiguousarray(data, dtype=np.uint64)
    head = struct.pack(
        "<BBB", params.k, params.f, arr.ndim
    ) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def tensor_wire_size(shape, rank: int | None = None) -> int:
    """Exact serialized size of a tensor body (analytic accounting)."""
    dims = tuple(shape)
    n = int(np.prod(dims, dtype=np.int64)) if dims else 1
    return 3 + 4 * len(dims) + 8 * n


def decode_tensor(buf: memoryview, offset: int) -> tuple[np.ndarray, RingParams, int]:
    try:
        k, f, rank = struct.unpack_from("<BBB", buf, offset)
        offset += 3
        dims = struct.unpack_from(f"<{rank}I", buf, offset)
        offset += 4 * rank
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        words = np.frombuffer(buf, dtype="<u8", count=n, offset=offset).copy()
        offset += 8 * n
        params = RingParams(k, f)
    except (struct.error, ValueError) as exc:
        raise DecodeError(f"bad tensor encoding: {exc}") from exc
    return words.reshape(dims), params, offset


def seal_body(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body))


def open_body(payload: bytes) -> memoryview:
    if len(payload) < 4:
        raise DecodeError("payload shorter than its checksum")
    body, crc = payload[:-4], struct.unpack("<I", payload[-4:])[0]
    if zlib.crc32(body) != crc:
        raise DecodeError("payload checksum mismatch")
    return memoryview(body)


def pack_frame(msg_type: int, session_id: int, seq: int, payload: bytes) -> bytes:
    return (
        struct.pack("<IB", FRAME_HEADER_LEN - 4 + len(payload), msg_type)
        + session_id.to_bytes(16, "little")
        + struct.pack("<Q", seq)
        + payload
    )


def unpack_frame(frame: bytes) -> tuple[int, int, int, bytes]:
    if len(frame) < FRAME_HEADER_LEN:
        raise DecodeError("frame shorter than header")
    length, msg_type = struct.unpack_from("<IB", frame, 0)
    if length != len(frame) - 4:
        raise DecodeError("frame length field disagrees with frame size")
    session_id = int.from_bytes(frame[5:21], "little")
    (seq,) = struct.unpack_from("<Q", frame, 21)
    return msg_type, session_id, seq, frame[FRAME_HEADER_LEN:]


def frame_wire_size(body_len: int) -> int:
    """Frame bytes for a body of the given length (+CRC, +header)."""
    return FRAME_HEADER_LEN + body_len + 4


# ---------------------------------------------------------------------------
# party channel


class PartyChannel:
    """Typed, sequenced message lane between the two parties of a session."""

    def __init__(self, link: Link, session_id: int, timeout: float = DEFAULT_TIMEOUT):
        self.link = link
        self.session_id = session_id
        self.timeout = timeout
        self._send_seq = 0
        self._recv_seq = -1

    def send(self, msg_type: int, body: bytes):
        frame = pack_frame(msg_type, self.session_id, self._send_seq, seal_body(body))
        self._send_seq += 1
        self.link.send_frame(frame)

    def recv(self, expect_type: int) -> memoryview:
        frame = self.link.recv_frame(self.timeout)
        msg_type, session_id, seq, payload = unpack_frame(frame)
        if session_id != self.session_id:
            raise DecodeError(
                f"frame for session {session_id:#x}, expected {self.session_id:#x}"
            )
        if seq != self._recv_seq + 1:
            raise SequenceGap(f"expected seq {self._recv_seq + 1}, got {seq}")
        self._recv_seq = seq
        body = open_body(payload)
        if msg_type == MSG_ABORT:
            code_len = struct.unpack_from("<H", body, 0)[0]
            code = bytes(body[2 : 2 + code_len]).decode("utf-8", "replace")
            raise ProtocolAborted(f"peer aborted: {code}")
        if msg_type != expect_type:
            raise DecodeError(f"expected message type {expect_type:#x}, got {msg_type:#x}")
        return body

    def send_abort(self, code: str):
        try:
            enc = code.encode("utf-8")
            self.send(MSG_ABORT, struct.pack("<H", len(enc)) + enc)
        except ChannelError:
            pass

    # -- masked Beaver openings (one message per party per multiplication)

    def send_masked_pair(self, e: np.ndarray, f: np.ndarray, params: RingParams):
        self.send(MSG_MASKED_OPEN, encode_tensor(e, params) + encode_tensor(f, params))

    def recv_masked_pair(self) -> tuple[np.ndarray, np.ndarray]:
        body = self.recv(MSG_MASKED_OPEN)
        e, _, off = decode_tensor(body, 0)
        f, _, off = decode_tensor(body, off)
        if off != len(body):
            raise DecodeError("trailing bytes in masked-open message")
        return e, f

    def send_share_tensor(self, purpose: int, tensor: ShareTensor):
        self.send(
            MSG_SHARE_TENSOR,
            struct.pack("<B", purpose) + encode_tensor(tensor.data, tensor.params),
        )

    def recv_share_tensor(self, owner: str, session: str) -> tuple[int, ShareTensor]:
        body = self.recv(MSG_SHARE_TENSOR)
        (purpose,) = struct.unpack_from("<B", body, 0)
        data, params, off = decode_tensor(body, 1)
        if off != len(body):
            raise DecodeError("trailing bytes in share-tensor message")
        return purpose, ShareTensor(data, params, owner, session)


# ---------------------------------------------------------------------------
# sessions and handshake


SESSION_STATES = ("handshake", "offline-loaded", "online", "done", "aborted")


class TraceLane:
    """Recorder for one sub-session's pre-truncation masks (s1 side)."""

    def __init__(self, entries: list | None):
        self.entries = entries

    def record(self, tag: str, data: np.ndarray):
        if self.entries is not None:
            self.entries.append((tag, np.array(data, copy=True)))


@dataclass
class Session:
    """Protocol session state shared by the party-side runners."""

    session_id: int
    params: RingParams
    role: str
    state: str = "handshake"
    trace: dict = field(default_factory=dict)  # lane index -> [(tag, mask), ...]
    trace_enabled: bool = False
    slot: int | None = None  # offline-budget slot agreed at handshake

    def advance(self, new_state: str):
        order = SESSION_STATES.index
        if new_state != "aborted" and order(new_state) < order(self.state):
            raise ChannelError(f"illegal state transition {self.state} -> {new_state}")
        self.state = new_state

    def lane(self, idx: int) -> TraceLane:
        if not self.trace_enabled:
            return TraceLane(None)
        return TraceLane(self.trace.setdefault(idx, []))


_SLOT_DEFER = 0xFFFFFFFF


def handshake(
    channel: PartyChannel,
    session: Session,
    manifest_digest: bytes,
    version: int = PROTOCOL_VERSION,
    slot: int | None = None,
) -> Session:
    """Agree on protocol version, ring params and the registered model set.

    The dialing party (s1) proposes which slice of the precomputed triple
    budget this prediction consumes; the peer defers and adopts it, which
    keeps concurrent predictions on matching correlated randomness.
    """
    if len(manifest_digest) != 32:
        raise ValueError("manifest digest must be 32 bytes")
    own_slot = _SLOT_DEFER if slot is None else slot
    body = (
        struct.pack("<HBB", version, session.params.k, session.params.f)
        + manifest_digest
        + struct.pack("<I", own_slot)
    )
    channel.send(MSG_HANDSHAKE, body)
    peer = channel.recv(MSG_HANDSHAKE)
    p_version, p_k, p_f = struct.unpack_from("<HBB", peer, 0)
    p_digest = bytes(peer[4:36])
    (p_slot,) = struct.unpack_from("<I", peer, 36)
    if p_version != version:
        raise VersionMismatch(f"peer protocol version {p_version}, ours {version}")
    if (p_k, p_f) != (session.params.k, session.params.f):
        raise ParamsMismatch(
            f"peer ring params k={p_k} f={p_f}, ours k={session.params.k} f={session.params.f}"
        )
    if p_digest != manifest_digest:
        raise ManifestMismatch("registered model manifests differ between parties")
    if own_slot != _SLOT_DEFER and p_slot != _SLOT_DEFER and own_slot != p_slot:
        raise ChannelError("both parties proposed conflicting budget slots")
    agreed = own_slot if own_slot != _SLOT_DEFER else p_slot
    session.slot = None if agreed == _SLOT_DEFER else int(agreed)
    session.advance("offline-loaded")
    return session


HANDSHAKE_BODY_LEN = 4 + 32 + 4
