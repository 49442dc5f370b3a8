"""Post-training quantization and engine-format weight export.

Writes the prediction engine's weight directory layout directly (no
engine import): a canonical ``model.json`` manifest and ``weights.bin``
holding the 8-byte magic ``PVWT0001``, the SHA-256 of the manifest file,
and each conv kernel as little-endian 64-bit ring words, row-major
[kw, kh, c_in, c_out], in layer order. Values are two's-complement
fixed point: round(w * 2^f) mod 2^k.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .ran import LayerDef, RanModel

FORMAT_VERSION = 1
WEIGHT_MAGIC = b"PVWT0001"


def quantize(values: np.ndarray, k: int, f: int) -> np.ndarray:
    scaled = np.rint(np.asarray(values, np.float64) * (1 << f))
    half = float(1 << (k - 1))
    if np.any(scaled >= half) or np.any(scaled < -half):
        raise OverflowError(f"weight magnitude exceeds k={k}, f={f} fixed point")
    mask = np.uint64(0xFFFFFFFFFFFFFFFF if k == 64 else (1 << k) - 1)
    return scaled.astype(np.int64).view(np.uint64) & mask


def dequantize(words: np.ndarray, k: int, f: int) -> np.ndarray:
    words = np.asarray(words, np.uint64)
    if k == 64:
        signed = words.view(np.int64)
    else:
        signed = words.astype(np.int64)
        signed = signed - ((signed >> (k - 1)) << k)
    return signed / float(1 << f)


def manifest_for(defs: list[LayerDef], user_id: int, k: int, f: int, input_shape) -> dict:
    layers = []
    for d in defs:
        if d.kind == "conv":
            layers.append(
                {
                    "kind": "conv",
                    "shape": list(d.kernel),
                    "stride": d.stride,
                    "padding": "same",
                    "activation": d.activation,
                    "alpha_shift": d.alpha_shift,
                }
            )
        else:
            layers.append({"kind": "upsample", "factor": d.factor})
    return {
        "format_version": FORMAT_VERSION,
        "user_id": user_id,
        "k": k,
        "f": f,
        "normalization": "div255",
        "input_shape": list(input_shape),
        "layers": layers,
    }


def export_model(
    model: RanModel,
    path,
    user_id: int,
    k: int = 64,
    f: int = 16,
    input_shape=(16, 16, 1),
) -> Path:
    """Quantize the trained reconstructor and write the weight directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = manifest_for(model.recon_defs, user_id, k, f, input_shape)
    manifest_bytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    (path / "model.json").write_bytes(manifest_bytes)
    blob = [WEIGHT_MAGIC, hashlib.sha256(manifest_bytes).digest()]
    for conv in model.R.convs:
        blob.append(np.ascontiguousarray(quantize(conv.kernel, k, f), dtype="<u8").tobytes())
    (path / "weights.bin").write_bytes(b"".join(blob))
    return path


def reload_kernels(path, defs: list[LayerDef], k: int, f: int) -> list[np.ndarray]:
    """Read back exported kernels as floats (round-trip verification)."""
    blob = (Path(path) / "weights.bin").read_bytes()
    assert blob[:8] == WEIGHT_MAGIC
    off = 40
    kernels = []
    for d in defs:
        if d.kind != "conv":
            continue
        n = int(np.prod(d.kernel))
        words = np.frombuffer(blob, dtype="<u8", count=n, offset=off)
        off += 8 * n
        kernels.append(dequantize(words, k, f).reshape(d.kernel))
    return kernels
