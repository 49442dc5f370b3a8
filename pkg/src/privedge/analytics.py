"""Closed-form accounting of protocol traffic and triple consumption.

Everything a prediction sends is a pure function of the registered
architectures, the model count and the ring/OT parameters. These
formulas are written out explicitly (they mirror the documented message
layouts, not the serializer code) and the acceptance suite asserts that
instrumented runs match them byte for byte, which pins down the
offline/online split and catches any hidden traffic.
"""

from __future__ import annotations

import numpy as np

from .beaver import triple_record_size
from .garbled.circuit import argmin_index_width
from .garbled.protocol import GARBLED_HEAD_LEN
from .model import ReconstructorSpec, triple_requests_for
from .net import HANDSHAKE_BODY_LEN, frame_wire_size

OT_V_HEAD = 7        # subkind u8 + count u32 + mod_bytes u16
RESULT_BODY = 4      # subkind u8 + index u16 + flag u8


def lrelu_and_gates(n: int, k: int) -> int:
    # one share-sum adder (2k-3), a k-wide sign mux, one mask subtractor (2k-2)
    return n * (5 * k - 5)


def argmin_and_gates(n: int, k: int) -> int:
    width = argmin_index_width(n)
    adders = (n + 1) * (2 * k - 3)
    tournament = (n - 1) * (2 * k + k + width)
    return adders + tournament + 2 * k


def tensor_body(shape) -> int:
    dims = tuple(shape)
    return 3 + 4 * len(dims) + 8 * int(np.prod(dims, dtype=np.int64))


def masked_open_bytes(e_shape, f_shape) -> int:
    """Both directions of one Beaver opening."""
    return 2 * frame_wire_size(tensor_body(e_shape) + tensor_body(f_shape))


def garbled_bytes(n_and, label_rows, out_rows, ot_bits, mod_bytes) -> int:
    """All three frames of one garbled layer: material, choices, responses."""
    material = GARBLED_HEAD_LEN + n_and * 64 + label_rows * 16 + out_rows * 16
    material += mod_bytes + ot_bits * 2 * mod_bytes
    v_msg = OT_V_HEAD + ot_bits * mod_bytes
    m_msg = OT_V_HEAD + ot_bits * 2 * mod_bytes
    return frame_wire_size(material) + frame_wire_size(v_msg) + frame_wire_size(m_msg)


def model_online_bytes(spec: ReconstructorSpec, mod_bytes: int) -> int:
    k = spec.params.k
    total = 0
    shape = tuple(spec.input_shape)
    for layer, out_shape in zip(spec.layers, spec.layer_shapes()):
        if layer.kind == "conv":
            kw, kh, ci, co = layer.kernel
            patches = int(np.prod(out_shape[:2]))
            total += masked_open_bytes((patches, kw * kh * ci), (kw * kh * ci, co))
            if layer.activation == "lrelu":
                n = int(np.prod(out_shape))
                total += garbled_bytes(
                    lrelu_and_gates(n, k),
                    2 * n * k + 2,
                    n * k,
                    n * k,
                    mod_bytes,
                )
        shape = out_shape
    pixels = int(np.prod(spec.input_shape))
    total += masked_open_bytes((pixels,), (pixels,))
    return total


def final_circuit_bytes(n_models: int, k: int, mod_bytes: int) -> int:
    width = argmin_index_width(n_models)
    ot_bits = (n_models + 1) * k
    total = garbled_bytes(
        argmin_and_gates(n_models, k),
        n_models * k + k + 2,
        width + 1,
        ot_bits,
        mod_bytes,
    )
    return total + frame_wire_size(RESULT_BODY)


def handshake_bytes() -> int:
    return 2 * frame_wire_size(HANDSHAKE_BODY_LEN)


def predict_online_bytes(specs: list[ReconstructorSpec], mod_bytes: int) -> int:
    """Every online frame of one prediction, both directions, all channels."""
    k = specs[0].params.k
    total = sum(model_online_bytes(s, mod_bytes) for s in specs)
    return total + final_circuit_bytes(len(specs), k, mod_bytes)


def predict_triple_counts(specs: list[ReconstructorSpec]) -> dict:
    """(kind, op_shape) -> count consumed by one prediction."""
    counts: dict = {}
    for spec in specs:
        for kind, shape, count in triple_requests_for(spec):
            counts[(kind, shape)] = counts.get((kind, shape), 0) + count
    return counts


def offline_bytes(specs: list[ReconstructorSpec], predictions: int = 1) -> int:
    """Triple file size per party covering the given prediction budget."""
    total = 0
    for spec in specs:
        for kind, shape, count in triple_requests_for(spec):
            total += triple_record_size(kind, shape, count * predictions)
    return total
