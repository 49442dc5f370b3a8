"""Garbling and evaluation with free XOR and point-and-permute.

Wire labels are 128-bit; the label pair of every wire differs by a global
offset whose lowest-order bit is one, so the last byte's LSB doubles as
the permute bit. XOR gates are free. Each AND gate has a four-row table,
rows ordered by the operand permute bits and encrypted with a keyed
hash

    H(A, B, t) = AES_key(A ^ rot8(B) ^ t) ^ (A ^ rot8(B) ^ t)

where t is a tweak binding the gate index and a per-circuit nonce. The
hash key is per-session and public; secrecy rests on the labels. Output
wires decode through per-wire digests of both labels, which also detects
corrupted material (no digest match raises GarbledTableError).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from ..errors import GarbledTableError
from ..rng import RandomSource
from .circuit import BooleanCircuit

_DECODE_DOMAIN = 0xF5


class _GcHash:
    def __init__(self, key: bytes, nonce: int):
        if len(key) != 16:
            raise ValueError("hash key must be 16 bytes")
        self._cipher = Cipher(algorithms.AES(key), modes.ECB())
        self._nonce = nonce & 0xFFFFFFFF

    def _tweak(self, indices: np.ndarray, domain: int) -> np.ndarray:
        m = indices.shape[0]
        tw = np.zeros((m, 16), dtype=np.uint8)
        tw[:, :8] = indices.astype("<u8").view(np.uint8).reshape(m, 8)
        tw[:, 8:12] = np.frombuffer(
            int(self._nonce).to_bytes(4, "little"), dtype=np.uint8
        )
        tw[:, 12] = domain
        return tw

    def _prp(self, x: np.ndarray) -> np.ndarray:
        ct = self._cipher.encryptor().update(x.tobytes())
        return np.frombuffer(ct, dtype=np.uint8).reshape(x.shape) ^ x

    def gate(self, a: np.ndarray, b: np.ndarray, indices: np.ndarray) -> np.ndarray:
        x = a ^ np.roll(b, 1, axis=1) ^ self._tweak(indices, 0)
        return self._prp(x)

    def wire_digest(self, labels: np.ndarray, wire_ids: np.ndarray) -> np.ndarray:
        x = labels ^ self._tweak(wire_ids, _DECODE_DOMAIN)
        return self._prp(x)[:, :8]


@dataclass
class GarbledCircuit:
    """Garbler-side material for one circuit execution."""

    tables: np.ndarray          # (n_and, 4, 16) uint8
    labels0: np.ndarray         # (n_wires, 16) uint8, semantic-zero labels
    delta: np.ndarray           # (16,) uint8 global offset
    nonce: int

    def input_labels(self, circuit: BooleanCircuit, group: str, bits: np.ndarray) -> np.ndarray:
        """Labels the garbler hands over for the given input bits."""
        ids, _ = circuit.input_groups[group]
        base = self.labels0[ids.ravel()]
        b = np.asarray(bits, dtype=np.uint8).ravel()
        return np.where(b[:, None].astype(bool), base ^ self.delta, base)

    def label_pairs(self, circuit: BooleanCircuit, group: str) -> tuple[np.ndarray, np.ndarray]:
        ids, _ = circuit.input_groups[group]
        base = self.labels0[ids.ravel()]
        return base, base ^ self.delta


def garble(
    circuit: BooleanCircuit, rng: RandomSource, hash_key: bytes, nonce: int
) -> GarbledCircuit:
    h = _GcHash(hash_key, nonce)
    delta = rng.labels(1)[0]
    delta[15] |= 1
    labels0 = np.zeros((circuit.n_wires, 16), dtype=np.uint8)
    for ids, _ in circuit.input_groups.values():
        flat = ids.ravel()
        labels0[flat] = rng.labels(flat.size)
    tables = np.empty((circuit.n_and, 4, 16), dtype=np.uint8)
    rot_delta = np.roll(delta, 1)
    for batch in circuit.batches:
        a0 = labels0[batch.a]
        if batch.op == "xor":
            labels0[batch.out] = a0 ^ labels0[batch.b]
            continue
        m = batch.a.size
        out0 = rng.labels(m)
        labels0[batch.out] = out0
        b0 = labels0[batch.b]
        pa = a0[:, 15] & 1
        pb = b0[:, 15] & 1
        idx = batch.and_offset + np.arange(m, dtype=np.int64)
        # free-XOR structure: the hash input of row (ta, tb) is
        # base ^ (pa^ta) delta ^ (pb^tb) rot(delta)
        base = a0 ^ np.roll(b0, 1, axis=1) ^ h._tweak(idx, 0)
        xs = np.empty((4, m, 16), dtype=np.uint8)
        masks = np.empty((4, m, 1), dtype=np.uint8)
        for ta in (0, 1):
            da = ((ta ^ pa)[:, None] * delta[None, :]).astype(np.uint8)
            for tb in (0, 1):
                row = ta * 2 + tb
                xs[row] = base ^ da ^ ((tb ^ pb)[:, None] * rot_delta[None, :])
                masks[row, :, 0] = (ta ^ pa) & (tb ^ pb)
        hs = h._prp(xs.reshape(4 * m, 16)).reshape(4, m, 16)
        ct = hs ^ out0[None, :, :] ^ masks * delta[None, None, :]
        tables[batch.and_offset : batch.and_offset + m] = np.swapaxes(ct, 0, 1)
    return GarbledCircuit(tables, labels0, delta, nonce)


def evaluate(
    circuit: BooleanCircuit,
    tables: np.ndarray,
    input_labels: dict,
    hash_key: bytes,
    nonce: int,
) -> np.ndarray:
    """Evaluator pass; returns the active label of every wire."""
    h = _GcHash(hash_key, nonce)
    labels = np.zeros((circuit.n_wires, 16), dtype=np.uint8)
    for name, (ids, _) in circuit.input_groups.items():
        got = input_labels[name]
        if got.shape[0] != ids.size:
            raise GarbledTableError(f"wrong number of labels for input group {name}")
        labels[ids.ravel()] = got
    for batch in circuit.batches:
        la = labels[batch.a]
        if batch.op == "xor":
            labels[batch.out] = la ^ labels[batch.b]
            continue
        m = batch.a.size
        lb = labels[batch.b]
        rows = ((la[:, 15] & 1) * 2 + (lb[:, 15] & 1)).astype(np.int64)
        idx = batch.and_offset + np.arange(m, dtype=np.int64)
        ct = tables[idx, rows]
        labels[batch.out] = h.gate(la, lb, idx) ^ ct
    return labels


def build_decode_table(
    gc: GarbledCircuit, circuit: BooleanCircuit, group: str, hash_key: bytes
) -> np.ndarray:
    """(n_out, 2, 8) digests of the zero and one labels of each output wire."""
    h = _GcHash(hash_key, gc.nonce)
    ids = circuit.outputs[group].ravel()
    l0 = gc.labels0[ids]
    d0 = h.wire_digest(l0, ids)
    d1 = h.wire_digest(l0 ^ gc.delta, ids)
    return np.stack([d0, d1], axis=1)


def decode_bits(
    circuit: BooleanCircuit,
    group: str,
    decode_table: np.ndarray,
    wire_labels: np.ndarray,
    hash_key: bytes,
    nonce: int,
) -> np.ndarray:
    """Map obtained output labels to cleartext bits, verifying digests."""
    h = _GcHash(hash_key, nonce)
    ids = circuit.outputs[group].ravel()
    got = h.wire_digest(wire_labels[ids], ids)
    is0 = np.all(got == decode_table[:, 0], axis=1)
    is1 = np.all(got == decode_table[:, 1], axis=1)
    if not np.all(is0 | is1):
        raise GarbledTableError(
            f"{int((~(is0 | is1)).sum())} output wires decoded to no valid label"
        )
    return is1.astype(np.uint8)
