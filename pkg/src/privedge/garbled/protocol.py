"""Two-party execution of the garbled sub-protocols.

The service provider s1 garbles, the regulator s2 evaluates. One
activation layer costs exactly one garbled-material message (tables,
garbler labels, output decode digests and the OT setup) plus one OT
round trip for the evaluator's input labels. The evaluator ends up with
H - R' while the garbler keeps its fresh mask R', so the activation
output is re-shared without either side seeing it.

The argmin circuit runs once per prediction; its evaluator decodes only
the winner index and threshold flag and reports them back on a result
message, which is the sole information either party learns.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .. import audit
from ..errors import DecodeError, OtProtocolError
from ..net import MSG_GARBLED, MSG_OT, MSG_RESULT, PartyChannel
from ..rng import RandomSource
from ..sharing import ShareTensor
from .circuit import (
    argmin_index_width,
    bits_to_vals,
    build_argmin_threshold_circuit,
    build_lrelu_circuit,
    build_lrelu_premul_circuit,
    vals_to_bits,
)
from .garbling import build_decode_table, decode_bits, evaluate, garble
from .ot import OtKeyPair, OtReceiver, OtSender, bytes_to_ints, ints_to_bytes

KIND_LRELU = 1
KIND_ARGMIN = 2
KIND_LRELU_PREMUL = 3

_GARBLER_GROUPS = {
    KIND_LRELU: ("z1", "rprime", "const"),
    KIND_ARGMIN: ("d_s1", "tau_s1", "const"),
    KIND_LRELU_PREMUL: ("z1", "az1", "rprime", "const"),
}
_EVALUATOR_GROUPS = {
    KIND_LRELU: ("z2",),
    KIND_ARGMIN: ("d_s2", "tau_s2"),
    KIND_LRELU_PREMUL: ("z2", "az2"),
}
_OUTPUT_GROUPS = {
    KIND_LRELU: ("h_minus_r",),
    KIND_ARGMIN: ("index", "flag"),
    KIND_LRELU_PREMUL: ("h_minus_r",),
}


def session_hash_key(session_id: int) -> bytes:
    return hashlib.sha256(b"privedge-gc-hash" + session_id.to_bytes(16, "little")).digest()[:16]


def _pack_garbled(kind, n, k, aux, nonce, gc, circuit, garbler_bits, keys, sender, hash_key):
    groups = _GARBLER_GROUPS[kind]
    rows = [gc.input_labels(circuit, g, garbler_bits[g]) for g in groups]
    label_rows = np.concatenate(rows, axis=0)
    decode = np.concatenate(
        [build_decode_table(gc, circuit, g, hash_key) for g in _OUTPUT_GROUPS[kind]],
        axis=0,
    )
    mod_bytes = keys.mod_bytes
    head = struct.pack(
        "<BIBBIIIIIHI",
        kind,
        n,
        k,
        aux,
        nonce,
        circuit.n_and,
        label_rows.shape[0],
        decode.shape[0],
        sender.n_bits,
        mod_bytes,
        keys.e,
    )
    r_blob = ints_to_bytes(
        [r for pair in sender.r_pairs for r in pair], mod_bytes
    )
    return (
        head
        + gc.tables.tobytes()
        + label_rows.tobytes()
        + decode.tobytes()
        + keys.n_modulus.to_bytes(mod_bytes, "little")
        + r_blob
    )


GARBLED_HEAD_LEN = struct.calcsize("<BIBBIIIIIHI")


def garbled_body_size(kind, n_and, n_label_rows, n_out_rows, n_ot_bits, mod_bytes) -> int:
    return (
        GARBLED_HEAD_LEN
        + n_and * 64
        + n_label_rows * 16
        + n_out_rows * 16
        + mod_bytes
        + n_ot_bits * 2 * mod_bytes
    )


def _unpack_garbled(body: memoryview):
    kind, n, k, aux, nonce, n_and, n_rows, n_out, n_ot, mod_bytes, e = struct.unpack_from(
        "<BIBBIIIIIHI", body, 0
    )
    off = GARBLED_HEAD_LEN
    want = garbled_body_size(kind, n_and, n_rows, n_out, n_ot, mod_bytes)
    if len(body) != want:
        raise DecodeError(f"garbled message size {len(body)}, expected {want}")
    tables = np.frombuffer(body, np.uint8, n_and * 64, off).reshape(n_and, 4, 16).copy()
    off += n_and * 64
    rows = np.frombuffer(body, np.uint8, n_rows * 16, off).reshape(n_rows, 16).copy()
    off += n_rows * 16
    decode = np.frombuffer(body, np.uint8, n_out * 16, off).reshape(n_out, 2, 8).copy()
    off += n_out * 16
    modulus = int.from_bytes(body[off : off + mod_bytes], "little")
    off += mod_bytes
    r_flat = bytes_to_ints(body[off : off + n_ot * 2 * mod_bytes], mod_bytes, n_ot * 2)
    r_pairs = list(zip(r_flat[0::2], r_flat[1::2]))
    return {
        "kind": kind,
        "n": n,
        "k": k,
        "aux": aux,
        "nonce": nonce,
        "tables": tables,
        "rows": rows,
        "decode": decode,
        "modulus": modulus,
        "e": e,
        "mod_bytes": mod_bytes,
        "r_pairs": r_pairs,
    }


def _ot_round_garbler(channel, sender, gc, circuit, kind, mod_bytes):
    """Answer the evaluator's blinded choices with masked label pairs."""
    body = channel.recv(MSG_OT)
    sub, count, mb = struct.unpack_from("<BIH", body, 0)
    if sub != 1 or mb != mod_bytes:
        raise OtProtocolError("unexpected OT choice message")
    v_batch = bytes_to_ints(body[7:], mod_bytes, count)
    m0_all, m1_all = [], []
    for g in _EVALUATOR_GROUPS[kind]:
        l0, l1 = gc.label_pairs(circuit, g)
        m0_all.extend(int.from_bytes(r.tobytes(), "little") for r in l0)
        m1_all.extend(int.from_bytes(r.tobytes(), "little") for r in l1)
    masked = sender.respond(v_batch, m0_all, m1_all)
    blob = ints_to_bytes([x for pair in masked for x in pair], mod_bytes)
    channel.send(MSG_OT, struct.pack("<BIH", 2, len(masked), mod_bytes) + blob)


def _ot_round_evaluator(channel, msg, eval_bits, rng):
    receiver = OtReceiver(msg["modulus"], msg["e"], msg["r_pairs"], eval_bits, rng)
    blob = ints_to_bytes(receiver.v_batch, msg["mod_bytes"])
    channel.send(
        MSG_OT, struct.pack("<BIH", 1, len(receiver.v_batch), msg["mod_bytes"]) + blob
    )
    body = channel.recv(MSG_OT)
    sub, count, mb = struct.unpack_from("<BIH", body, 0)
    if sub != 2 or mb != msg["mod_bytes"] or count != len(eval_bits):
        raise OtProtocolError("unexpected OT response message")
    flat = bytes_to_ints(body[7:], mb, count * 2)
    labels_int = receiver.finish(list(zip(flat[0::2], flat[1::2])))
    out = np.zeros((count, 16), dtype=np.uint8)
    for i, val in enumerate(labels_int):
        if val >> 128:
            raise OtProtocolError("unmasked label exceeds 128 bits")
        out[i] = np.frombuffer(int(val).to_bytes(16, "little"), np.uint8)
    return out


# ---------------------------------------------------------------------------
# L-ReLU


def _local_alpha_share(z: ShareTensor, alpha_shift: int) -> np.ndarray:
    """Each party's share of alpha*z: scale by the public constant, truncate."""
    from ..fixedpoint import ring_mul, trunc_share

    params = z.params
    if alpha_shift >= params.f:
        raise DecodeError("local alpha scaling needs alpha_shift < f")
    alpha_enc = np.uint64(1) << np.uint64(params.f - alpha_shift)
    raw = ring_mul(z.data.reshape(-1), alpha_enc, params)
    return trunc_share(raw, z.owner, params)


def lrelu_garbler(
    z: ShareTensor,
    alpha_shift: int,
    channel: PartyChannel,
    rng: RandomSource,
    ot_keys: OtKeyPair,
    alpha_mode: str = "shift",
) -> ShareTensor:
    params = z.params
    flat = z.data.reshape(-1)
    n = flat.size
    hash_key = session_hash_key(channel.session_id)
    nonce = rng.randbelow(1 << 32)
    r_prime = rng.ring_uniform(n, params)
    bits = {
        "z1": vals_to_bits(flat, params.k),
        "rprime": vals_to_bits(r_prime, params.k),
        "const": np.array([1, 0], dtype=np.uint8),
    }
    if alpha_mode == "shift":
        kind = KIND_LRELU
        circuit = build_lrelu_circuit(n, params.k, alpha_shift)
        ot_bits = n * params.k
    elif alpha_mode == "local":
        kind = KIND_LRELU_PREMUL
        circuit = build_lrelu_premul_circuit(n, params.k)
        bits["az1"] = vals_to_bits(_local_alpha_share(z, alpha_shift), params.k)
        ot_bits = 2 * n * params.k
    else:
        raise ValueError(f"unknown alpha mode {alpha_mode!r}")
    gc = garble(circuit, rng, hash_key, nonce)
    sender = OtSender(ot_keys, ot_bits, rng)
    channel.send(
        MSG_GARBLED,
        _pack_garbled(
            kind, n, params.k, alpha_shift, nonce, gc, circuit, bits, ot_keys, sender, hash_key
        ),
    )
    _ot_round_garbler(channel, sender, gc, circuit, kind, ot_keys.mod_bytes)
    return ShareTensor(r_prime.reshape(z.shape), params, z.owner, z.session)


def lrelu_evaluator(
    z: ShareTensor,
    alpha_shift: int,
    channel: PartyChannel,
    rng: RandomSource,
    alpha_mode: str = "shift",
) -> ShareTensor:
    params = z.params
    flat = z.data.reshape(-1)
    n = flat.size
    msg = _unpack_garbled(channel.recv(MSG_GARBLED))
    want_kind = KIND_LRELU if alpha_mode == "shift" else KIND_LRELU_PREMUL
    if msg["kind"] != want_kind or msg["n"] != n or msg["k"] != params.k:
        raise DecodeError("garbled L-ReLU message does not match this layer")
    if msg["aux"] != alpha_shift:
        raise DecodeError("peer garbled a different leak shift")
    n_zk = n * params.k
    rows = msg["rows"]
    if alpha_mode == "shift":
        circuit = build_lrelu_circuit(n, params.k, alpha_shift)
        eval_bits = vals_to_bits(flat, params.k).ravel()
        garbler_rows = {"z1": rows[:n_zk], "rprime": rows[n_zk : 2 * n_zk]}
        const_rows = rows[2 * n_zk : 2 * n_zk + 2]
    else:
        circuit = build_lrelu_premul_circuit(n, params.k)
        az = _local_alpha_share(z, alpha_shift)
        eval_bits = np.concatenate(
            [vals_to_bits(flat, params.k).ravel(), vals_to_bits(az, params.k).ravel()]
        )
        garbler_rows = {
            "z1": rows[:n_zk],
            "az1": rows[n_zk : 2 * n_zk],
            "rprime": rows[2 * n_zk : 3 * n_zk],
        }
        const_rows = rows[3 * n_zk : 3 * n_zk + 2]
    ot_labels = _ot_round_evaluator(channel, msg, eval_bits, rng)
    input_labels = dict(garbler_rows)
    input_labels["const"] = const_rows
    if alpha_mode == "shift":
        input_labels["z2"] = ot_labels
    else:
        input_labels["z2"] = ot_labels[:n_zk]
        input_labels["az2"] = ot_labels[n_zk:]
    hash_key = session_hash_key(channel.session_id)
    wire_labels = evaluate(circuit, msg["tables"], input_labels, hash_key, msg["nonce"])
    out_bits = decode_bits(
        circuit, "h_minus_r", msg["decode"], wire_labels, hash_key, msg["nonce"]
    )
    vals = bits_to_vals(out_bits.reshape(n, params.k), params.k)
    return ShareTensor(vals.reshape(z.shape), params, z.owner, z.session)


# ---------------------------------------------------------------------------
# argmin + threshold


def argmin_garbler(
    d: ShareTensor,
    tau: ShareTensor,
    channel: PartyChannel,
    rng: RandomSource,
    ot_keys: OtKeyPair,
) -> tuple[int, bool]:
    params = d.params
    n = d.data.size
    circuit = build_argmin_threshold_circuit(n, params.k)
    hash_key = session_hash_key(channel.session_id)
    nonce = rng.randbelow(1 << 32)
    gc = garble(circuit, rng, hash_key, nonce)
    bits = {
        "d_s1": vals_to_bits(d.data.reshape(-1), params.k),
        "tau_s1": vals_to_bits(tau.data.reshape(-1), params.k),
        "const": np.array([1, 0], dtype=np.uint8),
    }
    sender = OtSender(ot_keys, (n + 1) * params.k, rng)
    channel.send(
        MSG_GARBLED,
        _pack_garbled(
            KIND_ARGMIN,
            n,
            params.k,
            argmin_index_width(n),
            nonce,
            gc,
            circuit,
            bits,
            ot_keys,
            sender,
            hash_key,
        ),
    )
    _ot_round_garbler(channel, sender, gc, circuit, KIND_ARGMIN, ot_keys.mod_bytes)
    body = channel.recv(MSG_RESULT)
    sub, index, flag = struct.unpack_from("<BHB", body, 0)
    if sub != 1:
        raise DecodeError("expected an argmin result message")
    return int(index), bool(flag)


def argmin_evaluator(
    d: ShareTensor, tau: ShareTensor, channel: PartyChannel, rng: RandomSource
) -> tuple[int, bool]:
    params = d.params
    n = d.data.size
    msg = _unpack_garbled(channel.recv(MSG_GARBLED))
    if msg["kind"] != KIND_ARGMIN or msg["n"] != n or msg["k"] != params.k:
        raise DecodeError("garbled argmin message does not match the candidate set")
    circuit = build_argmin_threshold_circuit(n, params.k)
    eval_bits = np.concatenate(
        [
            vals_to_bits(d.data.reshape(-1), params.k).ravel(),
            vals_to_bits(tau.data.reshape(-1), params.k).ravel(),
        ]
    )
    ot_labels = _ot_round_evaluator(channel, msg, eval_bits, rng)
    nk = n * params.k
    rows = msg["rows"]
    input_labels = {
        "d_s1": rows[:nk],
        "tau_s1": rows[nk : nk + params.k],
        "const": rows[nk + params.k : nk + params.k + 2],
        "d_s2": ot_labels[:nk],
        "tau_s2": ot_labels[nk:],
    }
    hash_key = session_hash_key(channel.session_id)
    wire_labels = evaluate(circuit, msg["tables"], input_labels, hash_key, msg["nonce"])
    width = argmin_index_width(n)
    decode = msg["decode"]
    idx_bits = decode_bits(circuit, "index", decode[:width], wire_labels, hash_key, msg["nonce"])
    flag_bits = decode_bits(circuit, "flag", decode[width:], wire_labels, hash_key, msg["nonce"])
    audit.record_public_bits(width + 1, "argmin-threshold output")
    index = int(bits_to_vals(idx_bits.reshape(1, width), width)[0])
    flag = bool(flag_bits[0])
    channel.send(MSG_RESULT, struct.pack("<BHB", 1, index, int(flag)))
    return index, flag
