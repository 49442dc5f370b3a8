"""Randomness sources for shares, triples, labels and OT blinds.

Production paths draw from the OS entropy pool. Tests construct seeded
sources so protocol transcripts are reproducible; the PRIVEDGE_SEED
environment variable (test only) seeds the same way.
"""

from __future__ import annotations

import secrets

import numpy as np

from .errors import RandomnessError
from .fixedpoint import RingParams


class RandomSource:
    """Uniform randomness over rings, bytes and bounded integers.

    A `seed` of None gives a cryptographically seeded generator; an integer
    seed gives a deterministic stream. `spawn(tag)` derives independent
    substreams so concurrent sub-sessions stay reproducible.
    """

    def __init__(self, seed: int | None = None):
        self._seed = seed
        try:
            if seed is None:
                seq = np.random.SeedSequence(
                    int.from_bytes(secrets.token_bytes(32), "little")
                )
            else:
                seq = np.random.SeedSequence(seed)
        except Exception as exc:  # pragma: no cover - entropy failure
            raise RandomnessError(f"entropy source failed: {exc}") from exc
        self._seq = seq
        self._gen = np.random.Generator(np.random.Philox(seq))

    @property
    def seeded(self) -> bool:
        return self._seed is not None

    def spawn(self, tag: int) -> "RandomSource":
        child = RandomSource.__new__(RandomSource)
        child._seed = self._seed
        child._seq = np.random.SeedSequence(
            entropy=self._seq.entropy, spawn_key=self._seq.spawn_key + (tag,)
        )
        child._gen = np.random.Generator(np.random.Philox(child._seq))
        return child

    def ring_uniform(self, shape, params: RingParams) -> np.ndarray:
        """Uniform elements of Z_{2^k}."""
        words = self._gen.integers(
            0, 2**64, size=shape, dtype=np.uint64, endpoint=False
        )
        return words & params.mask

    def bits(self, n: int) -> np.ndarray:
        return self._gen.integers(0, 2, size=n, dtype=np.uint8)

    def bytes(self, n: int) -> bytes:
        return self._gen.bytes(n)

    def labels(self, n: int) -> np.ndarray:
        """n fresh 128-bit wire labels as uint8 rows."""
        raw = self._gen.bytes(n * 16)
        return np.frombuffer(raw, dtype=np.uint8).reshape(n, 16).copy()

    def randbelow(self, bound: int) -> int:
        """Uniform integer in [0, bound) by rejection sampling."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        nbytes = (bound.bit_length() + 7) // 8
        while True:
            v = int.from_bytes(self._gen.bytes(nbytes), "little")
            if v < bound:
                return v

    def randbelow_batch(self, bound: int, count: int) -> list[int]:
        """Batched rejection sampling; one entropy draw per round."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        nbytes = (bound.bit_length() + 7) // 8
        out: list[int] = []
        while len(out) < count:
            need = count - len(out)
            blob = self._gen.bytes(nbytes * (need + 4))
            for i in range(need + 4):
                v = int.from_bytes(blob[i * nbytes : (i + 1) * nbytes], "little")
                if v < bound:
                    out.append(v)
                    if len(out) == count:
                        break
        return out
