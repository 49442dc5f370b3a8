"""Boolean circuits for the non-linear protocol steps.

Circuits are built once per configuration and cached; gates are stored as
vectorized batches (same operation applied across many wires) so both
garbling and evaluation run as numpy array passes. Wire 0 is the constant
one, wire 1 the constant zero; both belong to the garbler's input set, so
a NOT is a free XOR with wire 0.

Two circuit families are provided:

* leaky-ReLU with re-sharing: reconstructs z = z1 + z2 mod 2^k inside the
  circuit, computes the arithmetic shift z >> alpha_shift, selects one of
  the two with the sign bit, and subtracts the garbler's fresh mask.
* argmin + threshold: reconstructs each candidate value and the threshold,
  runs a comparator tournament (lowest index wins ties) and outputs only
  the winner index and one at-most-threshold flag bit.

Bit vectors are little-endian: bit i of a value is wire column i.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass
class GateBatch:
    op: str                         # "xor" | "and"
    a: np.ndarray
    b: np.ndarray
    out: np.ndarray
    and_offset: int = 0             # first garbled-table row for "and"


@dataclass
class BooleanCircuit:
    n_wires: int
    n_and: int
    batches: list
    input_groups: dict              # name -> (wire ids, owner)
    outputs: dict                   # name -> wire ids
    meta: dict

    def input_ids(self, owner: str) -> np.ndarray:
        ids = [w.ravel() for w, o in self.input_groups.values() if o == owner]
        return np.concatenate(ids) if ids else np.empty(0, dtype=np.int64)


class _Builder:
    def __init__(self):
        self.n_wires = 2  # wire 0 = const 1, wire 1 = const 0
        self.n_and = 0
        self.batches: list[GateBatch] = []
        self.input_groups = {"const": (np.array([0, 1], dtype=np.int64), "garbler")}

    ONE = np.int64(0)
    ZERO = np.int64(1)

    def inputs(self, name: str, shape, owner: str) -> np.ndarray:
        n = int(np.prod(shape))
        ids = np.arange(self.n_wires, self.n_wires + n, dtype=np.int64).reshape(shape)
        self.n_wires += n
        self.input_groups[name] = (ids, owner)
        return ids

    def _emit(self, op, a, b) -> np.ndarray:
        a = np.atleast_1d(np.asarray(a, dtype=np.int64)).ravel()
        b = np.atleast_1d(np.asarray(b, dtype=np.int64)).ravel()
        if a.shape != b.shape:
            a, b = np.broadcast_arrays(a, b)
            a, b = a.ravel().copy(), b.ravel().copy()
        out = np.arange(self.n_wires, self.n_wires + a.size, dtype=np.int64)
        self.n_wires += a.size
        offset = 0
        if op == "and":
            offset = self.n_and
            self.n_and += a.size
        self.batches.append(GateBatch(op, a.copy(), b, out, offset))
        return out

    def xor(self, a, b):
        shape = np.broadcast_shapes(np.shape(a) or (1,), np.shape(b) or (1,))
        return self._emit("xor", np.broadcast_to(a, shape), np.broadcast_to(b, shape)).reshape(shape)

    def and_(self, a, b):
        shape = np.broadcast_shapes(np.shape(a) or (1,), np.shape(b) or (1,))
        return self._emit("and", np.broadcast_to(a, shape), np.broadcast_to(b, shape)).reshape(shape)

    def not_(self, a):
        return self.xor(a, np.broadcast_to(self.ONE, np.shape(a) or (1,)))

    # -- word-level helpers over (m, k) wire-id arrays, LSB first

    def add_mod(self, a: np.ndarray, b: np.ndarray, cin=None) -> np.ndarray:
        m, k = a.shape
        out = np.empty((m, k), dtype=np.int64)
        c = None if cin is None else np.broadcast_to(cin, (m,))
        for i in range(k):
            ai, bi = a[:, i], b[:, i]
            p = self.xor(ai, bi)
            if c is None:
                out[:, i] = p
                if i < k - 1:
                    c = self.and_(ai, bi)
            else:
                out[:, i] = self.xor(p, c)
                if i < k - 1:
                    # one fused batch for the generate and propagate terms
                    gt = self.and_(np.concatenate([ai, p]), np.concatenate([bi, c]))
                    c = self.xor(gt[:m], gt[m:])
        return out

    def sub_mod(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.add_mod(a, self.not_(b), cin=self.ONE)

    def le_unsigned(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """a <= b for unsigned words: carry-out of b + ~a + 1."""
        m, k = a.shape
        na = self.not_(a)
        c = np.broadcast_to(self.ONE, (m,))
        for i in range(k):
            p = self.xor(b[:, i], na[:, i])
            gt = self.and_(
                np.concatenate([b[:, i], p]), np.concatenate([na[:, i], c])
            )
            c = self.xor(gt[:m], gt[m:])
        return c

    def mux(self, sel: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per row: x if sel else y. sel has shape (m,), x/y (m, k)."""
        m, k = x.shape
        t = self.xor(x, y)
        u = self.and_(np.repeat(np.asarray(sel), k).reshape(m, k), t)
        return self.xor(y, u)

    def arith_shift(self, z: np.ndarray, shift: int) -> np.ndarray:
        """Free rewiring: arithmetic right shift with sign extension."""
        m, k = z.shape
        w = np.empty((m, k), dtype=np.int64)
        w[:, : k - shift] = z[:, shift:]
        w[:, k - shift :] = z[:, k - 1 : k]
        return w

    def build(self, outputs: dict, meta: dict) -> BooleanCircuit:
        return BooleanCircuit(
            n_wires=self.n_wires,
            n_and=self.n_and,
            batches=self.batches,
            input_groups=self.input_groups,
            outputs=outputs,
            meta=meta,
        )


@lru_cache(maxsize=128)
def build_lrelu_circuit(n: int, k: int, alpha_shift: int) -> BooleanCircuit:
    """SIMD circuit computing L-ReLU(z1 + z2) - rprime over n elements."""
    if not (1 <= alpha_shift < k):
        raise ValueError(f"alpha_shift must be in [1, {k}), got {alpha_shift}")
    bld = _Builder()
    z1 = bld.inputs("z1", (n, k), "garbler")
    rp = bld.inputs("rprime", (n, k), "garbler")
    z2 = bld.inputs("z2", (n, k), "evaluator")
    z = bld.add_mod(z1, z2)
    w = bld.arith_shift(z, alpha_shift)
    sign = z[:, k - 1]
    m = bld.mux(sign, w, z)
    out = bld.sub_mod(m, rp)
    return bld.build(
        {"h_minus_r": out},
        {"kind": "lrelu", "n": n, "k": k, "alpha_shift": alpha_shift},
    )


@lru_cache(maxsize=128)
def build_lrelu_premul_circuit(n: int, k: int) -> BooleanCircuit:
    """L-ReLU variant taking externally computed alpha*z shares.

    Used when the public-scaling configuration is chosen: both parties
    multiply their z shares by the public alpha locally (with the usual
    share-wise truncation) and the circuit only reconstructs, selects and
    re-shares.
    """
    bld = _Builder()
    z1 = bld.inputs("z1", (n, k), "garbler")
    a1 = bld.inputs("az1", (n, k), "garbler")
    rp = bld.inputs("rprime", (n, k), "garbler")
    z2 = bld.inputs("z2", (n, k), "evaluator")
    a2 = bld.inputs("az2", (n, k), "evaluator")
    z = bld.add_mod(z1, z2)
    az = bld.add_mod(a1, a2)
    sign = z[:, k - 1]
    m = bld.mux(sign, az, z)
    out = bld.sub_mod(m, rp)
    return bld.build(
        {"h_minus_r": out}, {"kind": "lrelu_premul", "n": n, "k": k}
    )


def argmin_index_width(n: int) -> int:
    return (0 if n <= 1 else math.ceil(math.log2(n))) + 1


@lru_cache(maxsize=128)
def build_argmin_threshold_circuit(n: int, k: int) -> BooleanCircuit:
    """Tournament argmin over n shared values plus a threshold flag.

    Only the winner index (argmin_index_width(n) bits) and the flag
    (min <= tau) are circuit outputs; candidate values never leave.
    Comparisons are two's-complement signed (sign bits flipped before the
    unsigned carry chains), so a dissimilarity nudged one step below zero
    by truncation noise still wins and still clears the threshold.
    """
    if n < 1:
        raise ValueError("need at least one candidate")
    bld = _Builder()
    d1 = bld.inputs("d_s1", (n, k), "garbler")
    t1 = bld.inputs("tau_s1", (1, k), "garbler")
    d2 = bld.inputs("d_s2", (n, k), "evaluator")
    t2 = bld.inputs("tau_s2", (1, k), "evaluator")
    d = bld.add_mod(d1, d2)
    tau = bld.add_mod(t1, t2)
    # signed ordering == unsigned ordering of the values with flipped MSBs
    d = np.concatenate([d[:, : k - 1], bld.not_(d[:, k - 1]).reshape(n, 1)], axis=1)
    tau = np.concatenate(
        [tau[:, : k - 1], bld.not_(tau[:, k - 1]).reshape(1, 1)], axis=1
    )
    width = argmin_index_width(n)

    def const_index(i: int) -> np.ndarray:
        bits = [(bld.ONE if (i >> j) & 1 else bld.ZERO) for j in range(width)]
        return np.array(bits, dtype=np.int64).reshape(1, width)

    entries = [(d[i : i + 1, :], const_index(i)) for i in range(n)]
    while len(entries) > 1:
        nxt = []
        for j in range(0, len(entries) - 1, 2):
            (va, ia), (vb, ib) = entries[j], entries[j + 1]
            le = bld.le_unsigned(va, vb)  # ties keep the lower index
            val = bld.mux(le, va, vb)
            idx = bld.mux(le, ia, ib)
            nxt.append((val, idx))
        if len(entries) % 2:
            nxt.append(entries[-1])
        entries = nxt
    min_val, min_idx = entries[0]
    flag = bld.le_unsigned(min_val, tau)
    return bld.build(
        {"index": min_idx.ravel(), "flag": flag},
        {"kind": "argmin", "n": n, "k": k, "index_width": width},
    )


def evaluate_clear(circuit: BooleanCircuit, inputs: dict) -> dict:
    """Plain boolean evaluation; the oracle for garbled execution.

    `inputs` maps group name to a uint8 bit array shaped like the group.
    The const group is implied.
    """
    values = np.zeros(circuit.n_wires, dtype=np.uint8)
    values[0] = 1
    for name, (ids, _) in circuit.input_groups.items():
        if name == "const":
            continue
        bits = np.asarray(inputs[name], dtype=np.uint8)
        if bits.shape != ids.shape:
            raise ValueError(f"input {name} must have shape {ids.shape}")
        values[ids.ravel()] = bits.ravel()
    for batch in circuit.batches:
        if batch.op == "xor":
            values[batch.out] = values[batch.a] ^ values[batch.b]
        else:
            values[batch.out] = values[batch.a] & values[batch.b]
    return {name: values[ids] for name, ids in circuit.outputs.items()}


def vals_to_bits(vals: np.ndarray, k: int) -> np.ndarray:
    """uint64 words -> (n, k) LSB-first bit matrix."""
    vals = np.asarray(vals, dtype=np.uint64).reshape(-1)
    shifts = np.arange(k, dtype=np.uint64)
    return ((vals[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)


def bits_to_vals(bits: np.ndarray, k: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint64).reshape(-1, k)
    shifts = np.arange(k, dtype=np.uint64)
    return (bits << shifts[None, :]).sum(axis=1, dtype=np.uint64)
