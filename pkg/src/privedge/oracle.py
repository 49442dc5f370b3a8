"""Cleartext reference pipeline used to verify the secure engine.

The convolution here walks output positions and kernel taps with direct
nested loops on purpose: it shares no lowering code with the secure path,
so a bug in the im2col route cannot hide in both.

Truncation modes:

* ``canonical``: true arithmetic shift; used for float-accuracy bounds.
* ``lockstep``: replays the share-wise truncation with the mask stream
  recorded by an instrumented secure run (s1's pre-truncation shares),
  reproducing the engine's results bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch
from .fixedpoint import (
    RingParams,
    arith_shift_right,
    ring_add,
    ring_mul,
    ring_sub,
    sign_bit,
    to_signed,
    truncate,
    trunc_share,
)
from .linear import conv_out_dim, same_padding
from .model import ReconstructorSpec, WeightSet


@dataclass
class OracleTrace:
    layer_outputs: list = field(default_factory=list)
    reconstruction: np.ndarray | None = None
    dissimilarities: list = field(default_factory=list)
    argmin_index: int | None = None
    flag: bool | None = None


class _Trunc:
    """Truncation strategy; lockstep consumes recorded masks in order."""

    def __init__(self, params: RingParams, masks=None):
        self.params = params
        self.masks = None if masks is None else list(masks)
        self._pos = 0

    def __call__(self, raw: np.ndarray) -> np.ndarray:
        if self.masks is None:
            return truncate(raw, self.params)
        if self._pos >= len(self.masks):
            raise ShapeMismatch("lockstep trace shorter than the truncation stream")
        _, mask = self.masks[self._pos]
        self._pos += 1
        mask = np.asarray(mask, dtype=np.uint64).reshape(raw.shape)
        other = ring_sub(raw, mask, self.params)
        return ring_add(
            trunc_share(mask, "s1", self.params),
            trunc_share(other, "s2", self.params),
            self.params,
        )


def conv_direct(x: np.ndarray, kernel: np.ndarray, stride: int, params: RingParams) -> np.ndarray:
    """SAME-padded strided convolution by explicit loops, raw 2^(2f) scale."""
    w, h, c = x.shape
    kw, kh, ci, co = kernel.shape
    if ci != c:
        raise ShapeMismatch(f"kernel wants {ci} channels, input has {c}")
    out_w, out_h = conv_out_dim(w, stride), conv_out_dim(h, stride)
    pw_lo, _ = same_padding(w, kw, stride)
    ph_lo, _ = same_padding(h, kh, stride)
    out = np.zeros((out_w, out_h, co), dtype=np.uint64)
    with np.errstate(over="ignore"):
        for ox in range(out_w):
            for oy in range(out_h):
                acc = np.zeros(co, dtype=np.uint64)
                for dx in range(kw):
                    ix = ox * stride + dx - pw_lo
                    if ix < 0 or ix >= w:
                        continue
                    for dy in range(kh):
                        iy = oy * stride + dy - ph_lo
                        if iy < 0 or iy >= h:
                            continue
                        for ch in range(ci):
                            acc += x[ix, iy, ch] * kernel[dx, dy, ch]
                out[ox, oy] = acc
    return out & params.mask


def lrelu_ring(z: np.ndarray, alpha_shift: int, params: RingParams) -> np.ndarray:
    neg = sign_bit(z, params) == 1
    return np.where(neg, arith_shift_right(z, alpha_shift, params), z)


def upsample_ring(x: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(x, factor, axis=0), factor, axis=1)


def oracle_forward(
    ws: WeightSet, image: np.ndarray, mode: str = "canonical", trace_masks=None
) -> OracleTrace:
    """Fixed-point forward pass over ring values."""
    spec = ws.spec
    params = spec.params
    if image.shape != tuple(spec.input_shape):
        raise ShapeMismatch(f"image {image.shape} vs spec input {spec.input_shape}")
    if mode not in ("canonical", "lockstep"):
        raise ValueError(f"unknown oracle mode {mode!r}")
    trunc = _Trunc(params, trace_masks if mode == "lockstep" else None)
    x = np.asarray(image, dtype=np.uint64) & params.mask
    trace = OracleTrace()
    conv_i = 0
    for layer in spec.layers:
        if layer.kind == "upsample":
            x = upsample_ring(x, layer.factor)
        else:
            raw = conv_direct(x, ws.kernels[conv_i], layer.stride, params)
            x = trunc(raw)
            if ws.biases[conv_i] is not None:
                x = ring_add(x, ws.biases[conv_i][None, None, :], params)
            if layer.activation == "lrelu":
                x = lrelu_ring(x, layer.alpha_shift, params)
            conv_i += 1
        trace.layer_outputs.append(x)
    trace.reconstruction = x
    return trace


def oracle_dissimilarity(
    image: np.ndarray,
    recon: np.ndarray,
    params: RingParams,
    mode: str = "canonical",
    trace_masks=None,
) -> np.uint64:
    """Sum of squared differences: per-element truncation then local sum."""
    trunc = _Trunc(params, trace_masks if mode == "lockstep" else None)
    o = ring_sub(image.reshape(-1), recon.reshape(-1), params)
    raw = ring_mul(o, o, params)
    per_elem = trunc(raw)
    with np.errstate(over="ignore"):
        return np.uint64(per_elem.sum(dtype=np.uint64) & params.mask)


def oracle_predict(
    weight_sets: list[WeightSet],
    image: np.ndarray,
    tau: int,
    uploader: int,
    mode: str = "canonical",
    traces: dict | None = None,
):
    """Cleartext analogue of the private prediction.

    Returns (outcome_user_id or None, decision) where decision is
    "block" or "allow". `traces` maps model position to its recorded
    truncation mask stream for lockstep mode.
    """
    params = weight_sets[0].spec.params
    ds = []
    for i, ws in enumerate(weight_sets):
        masks = None
        if traces is not None:
            masks = traces.get(i)
        fw = oracle_forward(ws, image, mode, None if masks is None else masks["forward"])
        d = oracle_dissimilarity(
            image,
            fw.reconstruction,
            params,
            mode,
            None if masks is None else masks["dissimilarity"],
        )
        ds.append(int(d))
    # signed comparison, matching the circuit: a dissimilarity one ulp
    # below zero from truncation noise still counts as the smallest
    signed = [int(to_signed(np.uint64(v), params)) for v in ds]
    idx = int(np.argmin(signed))  # first minimum: lowest index wins ties
    flag = signed[idx] <= int(to_signed(np.uint64(int(tau) % params.modulus), params))
    outcome = weight_sets[idx].spec.user_id if flag else None
    decision = "block" if (outcome is not None and outcome != uploader) else "allow"
    return outcome, decision, ds


# ---------------------------------------------------------------------------
# float reference (for quantization-accuracy bounds)


def float_forward(spec: ReconstructorSpec, kernels, biases, image: np.ndarray) -> np.ndarray:
    """Double-precision forward pass with the same SAME/stride conventions."""
    x = np.asarray(image, dtype=np.float64)
    conv_i = 0
    for layer in spec.layers:
        if layer.kind == "upsample":
            x = upsample_ring(x, layer.factor)
            continue
        kern = np.asarray(kernels[conv_i], dtype=np.float64)
        w, h, c = x.shape
        kw, kh, ci, co = kern.shape
        out_w, out_h = conv_out_dim(w, layer.stride), conv_out_dim(h, layer.stride)
        pw_lo, pw_hi = same_padding(w, kw, layer.stride)
        ph_lo, ph_hi = same_padding(h, kh, layer.stride)
        padded = np.pad(x, ((pw_lo, pw_hi), (ph_lo, ph_hi), (0, 0)))
        out = np.zeros((out_w, out_h, co))
        for dx in range(kw):
            for dy in range(kh):
                block = padded[
                    dx : dx + (out_w - 1) * layer.stride + 1 : layer.stride,
                    dy : dy + (out_h - 1) * layer.stride + 1 : layer.stride,
                ]
                out += np.einsum("whc,co->who", block, kern[dx, dy])
        if biases is not None and biases[conv_i] is not None:
            out = out + np.asarray(biases[conv_i], np.float64)[None, None, :]
        if layer.activation == "lrelu":
            alpha = 2.0 ** -layer.alpha_shift
            out = np.where(out > 0, out, alpha * out)
        x = out
        conv_i += 1
    return x


def amplification_bound(spec: ReconstructorSpec, kernels) -> float:
    """Used in accuracy tests: product of per-layer worst-case gains.

    Each convolution can scale an elementwise input error by at most the
    max over output channels of the kernel's absolute tap sum; L-ReLU and
    upsampling never amplify.
    """
    gain = 1.0
    conv_i = 0
    for layer in spec.layers:
        if layer.kind != "conv":
            continue
        kern = np.abs(np.asarray(kernels[conv_i], np.float64))
        gain *= max(1.0, float(kern.sum(axis=(0, 1, 2)).max()))
        conv_i += 1
    return gain
