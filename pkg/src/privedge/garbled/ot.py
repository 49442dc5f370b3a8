"""1-out-of-2 oblivious transfer by RSA blinding.

Per transferred bit the sender holds two 128-bit messages (wire labels)
and two fresh random values r0 != r1 below the modulus. The receiver
blinds its choice: v = (r_b + x^e) mod N for a random x, the sender
derives k_i = (v - r_i)^d mod N and returns m'_i = (m_i + k_i) mod N;
exactly one k_i equals the receiver's x, unmasking exactly m_b. The
sender sees only the uniformly blinded v.

Key material is per session; r pairs are per bit. The 512-bit modulus
exists for tests and offers no real security; production uses 2048.
"""

from __future__ import annotations

from dataclasses import dataclass

import gmpy2

from ..errors import OtProtocolError
from ..rng import RandomSource

DEFAULT_MODULUS_BITS = 2048
TEST_MODULUS_BITS = 512


@dataclass
class OtKeyPair:
    n_modulus: int
    e: int
    d: int
    p: int
    q: int

    @property
    def mod_bytes(self) -> int:
        return (self.n_modulus.bit_length() + 7) // 8

    def decrypt(self, c: int) -> int:
        """x^d mod N via the CRT components."""
        dp = self.d % (self.p - 1)
        dq = self.d % (self.q - 1)
        qinv = gmpy2.invert(self.q, self.p)
        m1 = gmpy2.powmod(c % self.p, dp, self.p)
        m2 = gmpy2.powmod(c % self.q, dq, self.q)
        return int(m2 + (((m1 - m2) * qinv) % self.p) * self.q)


def generate_keys(bits: int, rng: RandomSource) -> OtKeyPair:
    half = bits // 2
    e = 65537
    while True:
        p = int(gmpy2.next_prime(rng.randbelow(1 << half) | (1 << (half - 1)) | 1))
        q = int(gmpy2.next_prime(rng.randbelow(1 << half) | (1 << (half - 1)) | 1))
        if p == q:
            continue
        phi = (p - 1) * (q - 1)
        if gmpy2.gcd(e, phi) != 1:
            continue
        d = int(gmpy2.invert(e, phi))
        return OtKeyPair(p * q, e, d, p, q)


class OtSender:
    """Sender state for a batch of transfers under one key pair."""

    def __init__(self, keys: OtKeyPair, n_bits: int, rng: RandomSource):
        self.keys = keys
        self.n_bits = n_bits
        flat = rng.randbelow_batch(keys.n_modulus, 2 * n_bits)
        self.r_pairs: list[tuple[int, int]] = []
        for r0, r1 in zip(flat[0::2], flat[1::2]):
            while r1 == r0:
                r1 = rng.randbelow(keys.n_modulus)
            self.r_pairs.append((r0, r1))
        # precompute CRT exponents once per batch
        self._dp = keys.d % (keys.p - 1)
        self._dq = keys.d % (keys.q - 1)
        self._qinv = gmpy2.invert(keys.q, keys.p)

    def _decrypt(self, c: int) -> int:
        k = self.keys
        m1 = gmpy2.powmod(c % k.p, self._dp, k.p)
        m2 = gmpy2.powmod(c % k.q, self._dq, k.q)
        return int(m2 + (((m1 - m2) * self._qinv) % k.p) * k.q)

    def respond(self, v_batch: list[int], m0: list[int], m1: list[int]):
        """Mask both messages of each transfer against the blinded choice."""
        keys = self.keys
        n = keys.n_modulus
        if len(v_batch) != self.n_bits or len(m0) != self.n_bits or len(m1) != self.n_bits:
            raise OtProtocolError("transfer batch size mismatch")
        blinds = []
        for v, (r0, r1) in zip(v_batch, self.r_pairs):
            if not (0 <= v < n):
                raise OtProtocolError("blinded choice out of range")
            blinds.append((v - r0) % n)
            blinds.append((v - r1) % n)
        # both RSA decryptions of every transfer in two batched CRT passes
        e1 = gmpy2.powmod_base_list([c % keys.p for c in blinds], self._dp, keys.p)
        e2 = gmpy2.powmod_base_list([c % keys.q for c in blinds], self._dq, keys.q)
        ks = [
            int(b + (((a - b) * self._qinv) % keys.p) * keys.q)
            for a, b in zip(e1, e2)
        ]
        return [
            ((msg0 + ks[2 * i]) % n, (msg1 + ks[2 * i + 1]) % n)
            for i, (msg0, msg1) in enumerate(zip(m0, m1))
        ]


class OtReceiver:
    """Receiver state: blinds choice bits, later unmasks the obtained labels."""

    def __init__(self, n_modulus: int, e: int, r_pairs, bits, rng: RandomSource):
        if len(r_pairs) != len(bits):
            raise OtProtocolError("r pair count does not match choice bits")
        if n_modulus.bit_length() < 130:
            raise OtProtocolError("modulus too small to carry a label")
        self.n = n_modulus
        self.e = e
        self.bits = [int(b) & 1 for b in bits]
        self.blinds = rng.randbelow_batch(n_modulus, len(self.bits))
        blinded = gmpy2.powmod_base_list(self.blinds, self.e, self.n)
        self.v_batch: list[int] = []
        for (r0, r1), b, xe in zip(r_pairs, self.bits, blinded):
            if r0 == r1:
                raise OtProtocolError("sender r values must differ")
            rb = r1 if b else r0
            self.v_batch.append((rb + int(xe)) % self.n)

    def finish(self, masked_pairs) -> list[int]:
        if len(masked_pairs) != len(self.bits):
            raise OtProtocolError("masked message count mismatch")
        out = []
        for (mp0, mp1), b, x in zip(masked_pairs, self.bits, self.blinds):
            chosen = mp1 if b else mp0
            out.append((chosen - x) % self.n)
        return out


def ints_to_bytes(values, width: int) -> bytes:
    return b"".join(int(v).to_bytes(width, "little") for v in values)


def bytes_to_ints(buf, width: int, count: int) -> list[int]:
    if len(buf) != width * count:
        raise OtProtocolError("OT payload size mismatch")
    mv = memoryview(buf)
    return [int.from_bytes(mv[i * width : (i + 1) * width], "little") for i in range(count)]
