"""Role endpoints: the two prediction servers and the uploader client.

Topology: both servers listen. A client opens one connection to each
server and sends a request frame carrying its session id, the uploader
id and that server's shares of the image and threshold. The service
provider (s1) then dials the regulator (s2) once per sub-session (one
link per registered model plus one for the final circuit), identified by
the session ids in their frames: the final link uses the request's
session id S and model link i uses S + 1 + i. The final link starts with
the handshake; when it succeeds both sides run the prediction and report
the outcome back on their client connections.

Every connection speaks the frame format of `net`; inbound connections
are classified by their first frame (requests start with 0x06, the final
party link with the 0x00 handshake, model links with their first masked
opening), which is pushed back and re-read by the owning thread.
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .beaver import read_triple_file
from .errors import (
    ChannelError,
    DecodeError,
    MalformedSpec,
    ParamsMismatch,
    PrivEdgeError,
    ProtocolAborted,
)
from .fixedpoint import RingParams
from .inference import (
    PredictConfig,
    PredictionChannels,
    PredictionRequest,
    _PrefetchedTriples,
    predict,
)
from .model import load_share_dir, triple_requests_for, validate_undercomplete
from .net import (
    MSG_REQUEST,
    MSG_RESULT,
    Link,
    PartyChannel,
    Session,
    TcpLink,
    decode_tensor,
    encode_tensor,
    handshake,
    unpack_frame,
)
from .rng import RandomSource
from .sharing import ShareTensor

import hashlib


RESULT_PREDICTION = 2


class LazyLink:
    """Link that resolves to an inbound connection on first use.

    The regulator cannot claim a per-model link before the provider has
    sent its first frame on it, which happens only after the session
    handshake; resolving lazily avoids that circular wait.
    """

    def __init__(self, resolver):
        self._resolver = resolver
        self._inner = None

    def _resolve(self):
        if self._inner is None:
            self._inner = self._resolver()
        return self._inner

    def send_frame(self, frame: bytes):
        self._resolve().send_frame(frame)

    def recv_frame(self, timeout: float) -> bytes:
        return self._resolve().recv_frame(timeout)

    def close(self):
        if self._inner is not None:
            self._inner.close()

    @property
    def bytes_sent(self):
        return 0 if self._inner is None else self._inner.bytes_sent

    @property
    def bytes_received(self):
        return 0 if self._inner is None else self._inner.bytes_received


class PushbackLink:
    """Link wrapper that re-delivers one already-read frame first."""

    def __init__(self, inner: Link, first_frame: bytes):
        self._inner = inner
        self._first: bytes | None = first_frame

    def send_frame(self, frame: bytes):
        self._inner.send_frame(frame)

    def recv_frame(self, timeout: float) -> bytes:
        if self._first is not None:
            frame, self._first = self._first, None
            return frame
        return self._inner.recv_frame(timeout)

    def close(self):
        self._inner.close()

    def __getattr__(self, name):
        return getattr(self._inner, name)


def registry_digest(models: list) -> bytes:
    """Order-independent digest over the registered model set."""
    h = hashlib.sha256()
    for shares in sorted(models, key=lambda m: m.spec.user_id):
        h.update(struct.pack("<I", shares.spec.user_id))
        h.update(shares.spec.manifest_sha())
    return h.digest()


def pack_request(uploader: int, image: ShareTensor, tau: ShareTensor) -> bytes:
    return (
        struct.pack("<I", uploader)
        + encode_tensor(image.data, image.params)
        + encode_tensor(tau.data, tau.params)
    )


def unpack_request(body, owner: str, session: str):
    (uploader,) = struct.unpack_from("<I", body, 0)
    img, params, off = decode_tensor(body, 4)
    tau, params2, off = decode_tensor(body, off)
    if off != len(body):
        raise DecodeError("trailing bytes in request")
    if params2 != params:
        raise DecodeError("image and threshold use different ring params")
    return (
        uploader,
        ShareTensor(img, params, owner, session),
        ShareTensor(tau, params, owner, session),
    )


@dataclass
class ServerConfig:
    role: str
    models_dir: Path
    triples_file: Path
    listen: tuple
    peer: tuple | None = None      # s1 dials s2
    ot_modulus_bits: int = 2048
    parallel: bool = False
    timeout: float = 60.0


class PredictionServer:
    def __init__(self, config: ServerConfig):
        if config.role not in ("s1", "s2"):
            raise ValueError("role must be s1 or s2")
        self.config = config
        self.models = []
        dirs = sorted(p for p in Path(config.models_dir).iterdir() if p.is_dir())
        for d in dirs:
            shares = load_share_dir(d, config.role, session="service")
            validate_undercomplete(shares.spec)
            self.models.append(shares)
        if self.models:
            self.params = self.models[0].spec.params
            for m in self.models:
                if m.spec.params != self.params:
                    raise MalformedSpec("registered models disagree on ring params")
            self.store = read_triple_file(config.triples_file, config.role, "service")
            # pre-slice the offline budget so concurrent predictions at the
            # two parties consume matching triples whatever their arrival
            # order: slot k always holds the k-th dealt triple of each shape
            per_prediction = []
            needed: dict = {}
            for m in self.models:
                for kind, shape, count in triple_requests_for(m.spec):
                    per_prediction.append((kind, shape, count))
                    needed[(kind, tuple(shape))] = needed.get((kind, tuple(shape)), 0) + count
            capacity = min(
                self.store.remaining(kind, shape) // total
                for (kind, shape), total in needed.items()
            )
            self._slots = [
                _PrefetchedTriples(self.store, per_prediction) for _ in range(capacity)
            ]
        else:
            # endpoint without registrations: every request is refused
            self.params = RingParams()
            self.store = None
            self._slots = []
        self._slots_taken: set[int] = set()
        self._slot_lock = threading.Lock()
        self.digest = registry_digest(self.models)
        self._sock = socket.create_server(config.listen)
        self.port = self._sock.getsockname()[1]
        self._pending: dict[int, tuple] = {}
        self._cv = threading.Condition()
        self._stop = False

    # -- accept loop -------------------------------------------------------

    def serve_forever(self):
        while not self._stop:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                break
            threading.Thread(target=self._classify, args=(conn,), daemon=True).start()

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t

    def stop(self):
        self._stop = True
        try:
            self._sock.close()
        except OSError:
            pass

    def _classify(self, conn: socket.socket):
        link = TcpLink(conn)
        try:
            first = link.recv_frame(self.config.timeout)
            msg_type, session_id, _, _ = unpack_frame(first)
        except (ChannelError, DecodeError):
            link.close()
            return
        if msg_type == MSG_REQUEST:
            self._handle_request(PushbackLink(link, first), session_id)
        else:
            # a party link dialed by s1; park it for the owning prediction
            with self._cv:
                self._pending[session_id] = PushbackLink(link, first)
                self._cv.notify_all()

    def _claim_link(self, session_id: int) -> Link:
        deadline = time.time() + self.config.timeout
        with self._cv:
            while session_id not in self._pending:
                remaining = deadline - time.time()
                if remaining <= 0:
                    raise ChannelError(f"party link for session {session_id:#x} never arrived")
                self._cv.wait(remaining)
            return self._pending.pop(session_id)

    # -- per-prediction ----------------------------------------------------

    def _reserve_slot(self, slot: int | None = None) -> int:
        """Claim a budget slot: s1 picks the lowest free, s2 takes the peer's."""
        from .errors import TripleExhausted

        with self._slot_lock:
            if slot is None:
                for i in range(len(self._slots)):
                    if i not in self._slots_taken:
                        self._slots_taken.add(i)
                        return i
                raise TripleExhausted("offline prediction budget exhausted")
            if not (0 <= slot < len(self._slots)) or slot in self._slots_taken:
                raise TripleExhausted(f"peer proposed unavailable budget slot {slot}")
            self._slots_taken.add(slot)
            return slot

    def _release_slot(self, slot: int | None):
        if slot is None:
            return
        with self._slot_lock:
            self._slots_taken.discard(slot)

    def _party_links(self, session_id: int) -> list:
        n = len(self.models)
        if self.config.role == "s1":
            links = []
            for _ in range(n + 1):
                sock = socket.create_connection(self.config.peer, timeout=self.config.timeout)
                links.append(TcpLink(sock))
            return links
        return [
            LazyLink(lambda sid=session_id + 1 + i: self._claim_link(sid))
            for i in range(n)
        ] + [LazyLink(lambda: self._claim_link(session_id))]

    def _handle_request(self, client_link: Link, session_id: int):
        client = PartyChannel(client_link, session_id, timeout=self.config.timeout)
        links = []
        slot = None
        predict_started = False
        try:
            if not self.models:
                client.recv(MSG_REQUEST)
                client.send_abort("usage: no registered models")
                return
            body = client.recv(MSG_REQUEST)
            uploader, image, tau = unpack_request(body, self.config.role, "service")
            if image.params != self.params:
                raise ParamsMismatch("request ring params differ from registered models")
            if self.config.role == "s1":
                slot = self._reserve_slot()
            links = self._party_links(session_id)
            channels = PredictionChannels(
                per_model=[
                    PartyChannel(links[i], session_id + 1 + i, timeout=self.config.timeout)
                    for i in range(len(self.models))
                ],
                final=PartyChannel(links[-1], session_id, timeout=self.config.timeout),
            )
            session = Session(session_id, self.params, self.config.role)
            handshake(channels.final, session, self.digest, slot=slot)
            if self.config.role == "s2":
                slot = self._reserve_slot(session.slot)
            session.advance("online")
            offline_bytes = Path(self.config.triples_file).stat().st_size
            t0 = time.time()
            request = PredictionRequest(uploader, image, tau, session_id)
            cfg = PredictConfig(
                ot_modulus_bits=self.config.ot_modulus_bits,
                parallel=self.config.parallel,
            )
            rng = RandomSource()
            predict_started = True
            result = predict(
                self.config.role,
                request,
                self.models,
                self._slots[slot],
                channels,
                rng,
                cfg,
                session,
            )
            online_ms = int((time.time() - t0) * 1000)
            online_bytes = sum(l.bytes_sent + l.bytes_received for l in links)
            outcome = -1 if result.outcome is None else result.outcome
            client.send(
                MSG_RESULT,
                struct.pack(
                    "<BiBQQI",
                    RESULT_PREDICTION,
                    outcome,
                    1 if result.decision == "block" else 0,
                    online_bytes,
                    offline_bytes,
                    online_ms,
                ),
            )
        except PrivEdgeError as exc:
            client.send_abort(getattr(exc, "code", "error"))
        except Exception:  # noqa: BLE001 - never leak internals to the wire
            client.send_abort("error")
        finally:
            # a failed prediction may have part-drained its slot, so the
            # slot stays burned; release only if it was never touched
            if not predict_started:
                self._release_slot(slot)
            for l in links:
                l.close()
            client_link.close()


# ---------------------------------------------------------------------------
# client


@dataclass
class ClientResult:
    outcome: int | None
    decision: str
    session: int
    online_bytes: int
    offline_bytes: int
    online_ms: int


def request_prediction(
    s1_addr: tuple,
    s2_addr: tuple,
    uploader: int,
    image_shares: tuple,
    tau_shares: tuple,
    timeout: float = 120.0,
    rng: RandomSource | None = None,
) -> ClientResult:
    """Submit one prediction as the uploading user and await the outcome."""
    rng = rng or RandomSource()
    session_id = int.from_bytes(rng.bytes(16), "little")
    channels = []
    for addr, img, tau in (
        (s1_addr, image_shares[0], tau_shares[0]),
        (s2_addr, image_shares[1], tau_shares[1]),
    ):
        sock = socket.create_connection(addr, timeout=timeout)
        ch = PartyChannel(TcpLink(sock), session_id, timeout=timeout)
        ch.send(MSG_REQUEST, pack_request(uploader, img, tau))
        channels.append(ch)

    def read_result(ch):
        body = ch.recv(MSG_RESULT)
        sub, outcome, block, online_bytes, offline_bytes, online_ms = struct.unpack_from(
            "<BiBQQI", body, 0
        )
        if sub != RESULT_PREDICTION:
            raise DecodeError("expected a prediction result")
        return (outcome, block, online_bytes, offline_bytes, online_ms)

    # read both endpoints concurrently: whichever aborts first decides
    from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait

    with ThreadPoolExecutor(max_workers=2) as pool:
        futures = [pool.submit(read_result, ch) for ch in channels]
        done, _ = wait(futures, timeout=timeout, return_when=FIRST_EXCEPTION)
        for fut in done:
            if fut.exception() is not None:
                raise fut.exception()
        results = [fut.result() for fut in futures]
    if (results[0][0], results[0][1]) != (results[1][0], results[1][1]):
        raise ProtocolAborted("parties disagree on the prediction outcome")
    outcome, block, online_bytes, offline_bytes, online_ms = results[0]
    return ClientResult(
        outcome=None if outcome < 0 else outcome,
        decision="block" if block else "allow",
        session=session_id,
        online_bytes=online_bytes,
        offline_bytes=offline_bytes,
        online_ms=online_ms,
    )
