"""Offline phase: dealing, storing and consuming multiplication triples.

A triple is correlated randomness (U, V, Q) with Q = U * V, either
elementwise over a flat tensor ("mul", shape (L,)) or as a matrix product
("matmul", operation shape (m, n, p) meaning U:(m,n) V:(n,p) Q:(m,p)).
Triples are dealt by a trusted local dealer role, secret-shared between
the parties, and each consumed exactly once by the online phase.

Triple files are little-endian and self-delimiting; each record::

    magic   4s  "PVTR"
    version u16
    k       u8
    f       u8
    rank    u8       1 = elementwise, 3 = matmul operation shape
    dims    u32*rank
    count   u64
    words   count * (U || V || Q) as u64

One file per party per session; records appear in dealing order.
"""

from __future__ import annotations

import struct
import threading
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError, ShapeMismatch, TripleExhausted
from .fixedpoint import RingParams, ring_matmul, ring_mul
from .rng import RandomSource
from .sharing import ShareTensor, share

TRIPLE_MAGIC = b"PVTR"
TRIPLE_VERSION = 1


@dataclass
class BeaverTriple:
    kind: str            # "mul" | "matmul"
    op_shape: tuple      # mul: (L,)  matmul: (m, n, p)
    u: ShareTensor
    v: ShareTensor
    q: ShareTensor

    def tensor_shapes(self) -> tuple[tuple, tuple, tuple]:
        return triple_tensor_shapes(self.kind, self.op_shape)


def triple_tensor_shapes(kind: str, op_shape: tuple) -> tuple[tuple, tuple, tuple]:
    if kind == "mul":
        (L,) = op_shape
        return (L,), (L,), (L,)
    if kind == "matmul":
        m, n, p = op_shape
        return (m, n), (n, p), (m, p)
    raise ValueError(f"unknown triple kind {kind!r}")


class TripleStore:
    """One party's queue of unconsumed triples, keyed by operation shape."""

    def __init__(self, owner: str, params: RingParams, session: str = "local"):
        self.owner = owner
        self.params = params
        self.session = session
        self._queues: dict[tuple, deque] = {}
        self._lock = threading.Lock()
        self.generated = 0
        self.consumed = 0
        self.consumed_by_shape: dict[tuple, int] = {}

    def put(self, triple: BeaverTriple):
        key = (triple.kind, triple.op_shape)
        with self._lock:
            self._queues.setdefault(key, deque()).append(triple)
            self.generated += 1

    def take(self, kind: str, op_shape: tuple) -> BeaverTriple:
        key = (kind, tuple(op_shape))
        with self._lock:
            q = self._queues.get(key)
            if not q:
                raise TripleExhausted(
                    f"offline budget exhausted for {kind} triple of shape {op_shape}"
                )
            self.consumed += 1
            self.consumed_by_shape[key] = self.consumed_by_shape.get(key, 0) + 1
            return q.popleft()

    def remaining(self, kind: str, op_shape: tuple) -> int:
        with self._lock:
            q = self._queues.get((kind, tuple(op_shape)))
            return len(q) if q else 0


def _deal_one(kind, op_shape, params, rng, session, forced_u=None):
    us, vs, qs = triple_tensor_shapes(kind, op_shape)
    u = rng.ring_uniform(us, params) if forced_u is None else np.asarray(forced_u, np.uint64)
    v = rng.ring_uniform(vs, params)
    if kind == "mul":
        q = ring_mul(u, v, params)
    else:
        q = ring_matmul(u, v, params)
    u1, u2 = share(u, params, rng, session)
    v1, v2 = share(v, params, rng, session)
    q1, q2 = share(q, params, rng, session)
    t1 = BeaverTriple(kind, tuple(op_shape), u1, v1, q1)
    t2 = BeaverTriple(kind, tuple(op_shape), u2, v2, q2)
    return t1, t2


def deal_triples(
    requests: list[tuple[str, tuple, int]],
    params: RingParams,
    rng: RandomSource,
    session: str = "local",
) -> tuple[TripleStore, TripleStore]:
    """Deal `count` triples for each (kind, op_shape, count) request."""
    s1 = TripleStore("s1", params, session)
    s2 = TripleStore("s2", params, session)
    for kind, op_shape, count in requests:
        if count < 1:
            raise ValueError("triple count must be >= 1")
        for _ in range(count):
            t1, t2 = _deal_one(kind, op_shape, params, rng, session)
            s1.put(t1)
            s2.put(t2)
    return s1, s2


# ---------------------------------------------------------------------------
# file format


def _record_kind(rank: int) -> str:
    if rank == 1:
        return "mul"
    if rank == 3:
        return "matmul"
    raise DecodeError(f"triple record rank {rank} is neither 1 (mul) nor 3 (matmul)")


def triple_record_size(kind: str, op_shape: tuple, count: int) -> int:
    us, vs, qs = triple_tensor_shapes(kind, op_shape)
    words = int(np.prod(us) + np.prod(vs) + np.prod(qs))
    return 4 + 2 + 1 + 1 + 1 + 4 * len(op_shape) + 8 + count * words * 8


def write_triple_file(path, store_dump: list[BeaverTriple], params: RingParams):
    """Serialize triples grouped by consecutive runs of equal shape."""
    with open(path, "wb") as fh:
        i = 0
        while i < len(store_dump):
            first = store_dump[i]
            j = i
            while (
                j < len(store_dump)
                and store_dump[j].kind == first.kind
                and store_dump[j].op_shape == first.op_shape
            ):
                j += 1
            group = store_dump[i:j]
            rank = len(first.op_shape)
            fh.write(TRIPLE_MAGIC)
            fh.write(
                struct.pack(
                    f"<HBBB{rank}IQ",
                    TRIPLE_VERSION,
                    params.k,
                    params.f,
                    rank,
                    *first.op_shape,
                    len(group),
                )
            )
            for t in group:
                fh.write(t.u.data.tobytes())
                fh.write(t.v.data.tobytes())
                fh.write(t.q.data.tobytes())
            i = j


def read_triple_file(path, owner: str, session: str = "local") -> TripleStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0
    store: TripleStore | None = None
    while off < len(blob):
        if blob[off : off + 4] != TRIPLE_MAGIC:
            raise DecodeError("bad triple file magic")
        off += 4
        version, k, f, rank = struct.unpack_from("<HBBB", blob, off)
        off += 5
        if version != TRIPLE_VERSION:
            raise DecodeError(f"unsupported triple file version {version}")
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        (count,) = struct.unpack_from("<Q", blob, off)
        off += 8
        params = RingParams(k, f)
        if store is None:
            store = TripleStore(owner, params, session)
        kind = _record_kind(rank)
        shapes = triple_tensor_shapes(kind, dims)
        sizes = [int(np.prod(s)) for s in shapes]
        for _ in range(count):
            parts = []
            for shp, n in zip(shapes, sizes):
                arr = np.frombuffer(blob, dtype="<u8", count=n, offset=off).copy()
                off += 8 * n
                parts.append(ShareTensor(arr.reshape(shp) & params.mask, params, owner, session))
            store.put(BeaverTriple(kind, tuple(dims), *parts))
    if store is None:
        raise DecodeError("empty triple file")
    return store


def dump_store(store: TripleStore) -> list[BeaverTriple]:
    """Flatten a store's queues in insertion order for serialization."""
    out = []
    with store._lock:
        for q in store._queues.values():
            out.extend(q)
    return out


def check_triple(t1: BeaverTriple, t2: BeaverTriple) -> bool:
    """Dealer-side verification that a dealt pair multiplies correctly."""
    from .sharing import reconstruct

    if t1.kind != t2.kind or t1.op_shape != t2.op_shape:
        raise ShapeMismatch("triple halves disagree on shape")
    u = reconstruct(t1.u, t2.u)
    v = reconstruct(t1.v, t2.v)
    q = reconstruct(t1.q, t2.q)
    params = t1.u.params
    expect = ring_mul(u, v, params) if t1.kind == "mul" else ring_matmul(u, v, params)
    return bool(np.array_equal(q, expect))
