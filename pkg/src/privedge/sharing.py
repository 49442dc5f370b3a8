"""Additive secret sharing of ring tensors between two parties.

A secret T splits into S1 = R (uniform) held by the service provider s1
and S2 = T - R held by the regulator s2; S1 + S2 = T elementwise mod 2^k.
Each share in isolation is uniform over the ring and reveals nothing.
Addition, subtraction and scaling by public constants act on shares
locally. The scheme is elementwise, so tensors of any rank share alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import audit
from .errors import SessionMismatch, ShapeMismatch
from .fixedpoint import RingParams, ring_add, ring_mul, ring_sub
from .rng import RandomSource

PARTIES = ("s1", "s2")


@dataclass
class ShareTensor:
    """One party's additive share of a ring tensor."""

    data: np.ndarray  # uint64, masked to k bits
    params: RingParams
    owner: str
    session: str = "local"

    def __post_init__(self):
        if self.owner not in PARTIES:
            raise ValueError(f"owner must be one of {PARTIES}")
        self.data = np.ascontiguousarray(self.data, dtype=np.uint64)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def reshape(self, shape) -> "ShareTensor":
        return ShareTensor(self.data.reshape(shape), self.params, self.owner, self.session)

    def flatten(self) -> "ShareTensor":
        return self.reshape((-1,))


def _check_combinable(a: ShareTensor, b: ShareTensor):
    if a.shape != b.shape:
        raise ShapeMismatch(f"share shapes differ: {a.shape} vs {b.shape}")
    if a.session != b.session:
        raise SessionMismatch(f"sessions differ: {a.session} vs {b.session}")
    if a.params != b.params:
        raise SessionMismatch("ring params differ between shares")


def share(secret, params: RingParams, rng: RandomSource, session: str = "local"):
    """Split a ring tensor into the (s1, s2) share pair."""
    secret = np.asarray(secret, dtype=np.uint64) & params.mask
    r = rng.ring_uniform(secret.shape, params)
    s1 = ShareTensor(r, params, "s1", session)
    s2 = ShareTensor(ring_sub(secret, r, params), params, "s2", session)
    return s1, s2


def reconstruct(a: ShareTensor, b: ShareTensor) -> np.ndarray:
    """Combine both parties' shares back into the secret.

    Audited: the online prediction phase must never call this.
    """
    _check_combinable(a, b)
    if a.owner == b.owner:
        raise ShapeMismatch("cannot reconstruct from two shares of the same party")
    audit.record_reconstruct()
    return ring_add(a.data, b.data, a.params)


def local_add(a: ShareTensor, b: ShareTensor) -> ShareTensor:
    """Shares of x + y from shares of x and y; one party's side, no traffic."""
    _check_combinable(a, b)
    if a.owner != b.owner:
        raise ShapeMismatch("local_add combines shares held by the same party")
    return ShareTensor(ring_add(a.data, b.data, a.params), a.params, a.owner, a.session)


def local_sub(a: ShareTensor, b: ShareTensor) -> ShareTensor:
    _check_combinable(a, b)
    if a.owner != b.owner:
        raise ShapeMismatch("local_sub combines shares held by the same party")
    return ShareTensor(ring_sub(a.data, b.data, a.params), a.params, a.owner, a.session)


def local_scale(a: ShareTensor, scalar: int) -> ShareTensor:
    """Multiply a share by a public ring constant."""
    c = np.uint64(int(scalar) % a.params.modulus)
    return ShareTensor(ring_mul(a.data, c, a.params), a.params, a.owner, a.session)


def zero_share(shape, params: RingParams, owner: str, session: str = "local") -> ShareTensor:
    return ShareTensor(np.zeros(shape, dtype=np.uint64), params, owner, session)
