"""Fixed-point arithmetic over the ring Z_{2^k}.

Reals are embedded as two's-complement fixed-point integers with f
fractional bits: encode(x) = round(x * 2^f) mod 2^k. All arithmetic wraps
modulo 2^k (no saturation). A product of two encoded values carries scale
2^(2f); `truncate` shifts it back to scale 2^f.

Ring values are stored as numpy uint64 arrays masked to the low k bits,
for every supported k. Scalars round-trip through 0-d arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_VALID_K = (8, 16, 32, 64)


@dataclass(frozen=True)
class RingParams:
    """Ring modulus 2^k with a fixed-point scale of 2^f.

    All protocol participants in a session must use identical params;
    the handshake checks this.
    """

    k: int = 64
    f: int = 16

    def __post_init__(self):
        if self.k not in _VALID_K:
            raise ValueError(f"k must be one of {_VALID_K}, got {self.k}")
        if not (2 <= self.f < self.k):
            raise ValueError(f"need 2 <= f < k, got f={self.f}, k={self.k}")

    @property
    def mask(self) -> np.uint64:
        if self.k == 64:
            return np.uint64(0xFFFFFFFFFFFFFFFF)
        return np.uint64((1 << self.k) - 1)

    @property
    def modulus(self) -> int:
        return 1 << self.k

    @property
    def scale(self) -> int:
        return 1 << self.f

    @property
    def half(self) -> int:
        """Smallest ring value with the sign bit set."""
        return 1 << (self.k - 1)

    @property
    def max_abs(self) -> float:
        """Strict bound on |x| for encodable reals."""
        return float(1 << (self.k - self.f - 1))


def as_ring(values, params: RingParams) -> np.ndarray:
    """Coerce integers to a masked uint64 ring array."""
    arr = np.asarray(values)
    if arr.dtype != np.uint64:
        arr = arr.astype(np.int64).astype(np.uint64)
    return arr & params.mask


def to_signed(e, params: RingParams) -> np.ndarray:
    """Interpret ring values as two's-complement signed integers."""
    e = np.asarray(e, dtype=np.uint64)
    if params.k == 64:
        return e.view(np.int64) if e.ndim else np.int64(e.reshape(1).view(np.int64)[0])
    s = e.astype(np.int64)
    return s - ((s >> (params.k - 1)) << params.k)


def from_signed(s, params: RingParams) -> np.ndarray:
    s = np.asarray(s, dtype=np.int64)
    return s.view(np.uint64) & params.mask


def encode(x, params: RingParams) -> np.ndarray:
    """Embed reals into the ring at scale 2^f. Raises OverflowError out of range."""
    x = np.asarray(x, dtype=np.float64)
    scaled = np.rint(x * params.scale)
    half = float(1 << (params.k - 1))  # exact in float64 for k <= 64
    if np.any(scaled >= half) or np.any(scaled < -half) or not np.all(np.isfinite(scaled)):
        bad = float(np.max(np.abs(x)))
        raise OverflowError(
            f"value magnitude {bad} not representable with k={params.k}, f={params.f}"
        )
    return from_signed(scaled.astype(np.int64), params)


def decode(e, params: RingParams) -> np.ndarray:
    """Inverse of encode up to the 2^-f quantization."""
    return to_signed(e, params) / np.float64(params.scale)


def ring_add(a, b, params: RingParams) -> np.ndarray:
    with np.errstate(over="ignore"):
        return (np.asarray(a, np.uint64) + np.asarray(b, np.uint64)) & params.mask


def ring_sub(a, b, params: RingParams) -> np.ndarray:
    with np.errstate(over="ignore"):
        return (np.asarray(a, np.uint64) - np.asarray(b, np.uint64)) & params.mask


def ring_neg(a, params: RingParams) -> np.ndarray:
    with np.errstate(over="ignore"):
        return (np.uint64(0) - np.asarray(a, np.uint64)) & params.mask


def ring_mul(a, b, params: RingParams) -> np.ndarray:
    with np.errstate(over="ignore"):
        return (np.asarray(a, np.uint64) * np.asarray(b, np.uint64)) & params.mask


def ring_matmul(a, b, params: RingParams) -> np.ndarray:
    """Matrix product in the ring. uint64 matmul wraps mod 2^64 natively."""
    with np.errstate(over="ignore"):
        return (np.asarray(a, np.uint64) @ np.asarray(b, np.uint64)) & params.mask


def arith_shift_right(e, n: int, params: RingParams) -> np.ndarray:
    """Sign-preserving right shift of two's-complement ring values."""
    e = np.asarray(e, dtype=np.uint64)
    if params.k == 64:
        return (e.view(np.int64) >> np.int64(n)).view(np.uint64)
    return from_signed(to_signed(e, params) >> np.int64(n), params)


def truncate(e, params: RingParams) -> np.ndarray:
    """Rescale a scale-2^(2f) product back to scale 2^f (canonical form)."""
    return arith_shift_right(e, params.f, params)


def trunc_share(share, owner: str, params: RingParams) -> np.ndarray:
    """Local per-party truncation of one additive share.

    s1 shifts its share as an unsigned integer; s2 negates, shifts, negates.
    Summing the two results differs from truncate(secret) by at most 1 ulp
    except with probability ~ |secret| * 2^(f-k+1), when the secret's
    magnitude approaches the ring's headroom.
    """
    share = np.asarray(share, dtype=np.uint64)
    if owner == "s1":
        return (share & params.mask) >> np.uint64(params.f)
    if owner == "s2":
        neg = ring_neg(share, params)
        return ring_neg(neg >> np.uint64(params.f), params)
    raise ValueError(f"unknown share owner {owner!r}")


def trunc_pair(share_s1, share_s2, params: RingParams) -> np.ndarray:
    """Reconstruction of the share-wise truncation, given both shares.

    This is the reference the lockstep oracle uses: feeding it s1's
    recorded pre-truncation share reproduces the engine's result bit for
    bit, including the probabilistic 1-ulp error.
    """
    return ring_add(
        trunc_share(share_s1, "s1", params),
        trunc_share(share_s2, "s2", params),
        params,
    )


def sign_bit(e, params: RingParams) -> np.ndarray:
    e = np.asarray(e, dtype=np.uint64)
    return ((e >> np.uint64(params.k - 1)) & np.uint64(1)).astype(np.uint8)
