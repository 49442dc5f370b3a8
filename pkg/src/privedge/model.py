"""Reconstructor architecture descriptions, weights and their files.

A reconstructor is an ordered stack of strided SAME convolutions
(encoder) and nearest-neighbour upsamples followed by stride-1
convolutions (decoder). The service provider validates that a registered
architecture is under-complete (some layer's feature map is strictly
smaller than the input) and that it maps the input shape to itself,
rejecting anything that could implement the identity copy.

Weight directory layout (produced by a trainer, consumed here):

* ``model.json``  manifest: format_version, user_id, k, f,
  normalization ("div255"), input_shape, layers[].
* ``weights.bin`` 8-byte magic ``PVWT0001``, 32-byte SHA-256 of the
  manifest file, then per layer the quantized kernel tensor
  [kw, kh, c_in, c_out] row-major as little-endian u64 words, followed by
  the bias vector when the layer declares one.

Share directories hold the same manifest next to ``weights.s1.bin`` /
``weights.s2.bin`` in the identical layout, holding that party's share
words instead of the cleartext quantized weights.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DecodeError, MalformedSpec, ManifestMismatch
from .fixedpoint import RingParams, encode, decode
from .linear import conv_mul_op_shape, conv_out_dim
from .rng import RandomSource
from .sharing import ShareTensor, share

FORMAT_VERSION = 1
WEIGHT_MAGIC = b"PVWT0001"
NORMALIZATION = "div255"


@dataclass
class LayerSpec:
    kind: str                    # "conv" | "upsample"
    kernel: tuple = ()           # conv: (kw, kh, c_in, c_out)
    stride: int = 1
    padding: str = "same"
    activation: str = "none"     # "lrelu" | "none"
    alpha_shift: int = 2
    bias: bool = False
    factor: int = 2              # upsample only

    def to_manifest(self) -> dict:
        if self.kind == "conv":
            d = {
                "kind": "conv",
                "shape": list(self.kernel),
                "stride": self.stride,
                "padding": self.padding,
                "activation": self.activation,
                "alpha_shift": self.alpha_shift,
            }
            if self.bias:
                d["bias"] = True
            return d
        return {"kind": "upsample", "factor": self.factor}

    @staticmethod
    def from_manifest(d: dict) -> "LayerSpec":
        if d["kind"] == "conv":
            return LayerSpec(
                kind="conv",
                kernel=tuple(d["shape"]),
                stride=int(d["stride"]),
                padding=d.get("padding", "same"),
                activation=d.get("activation", "none"),
                alpha_shift=int(d.get("alpha_shift", 2)),
                bias=bool(d.get("bias", False)),
            )
        if d["kind"] == "upsample":
            return LayerSpec(kind="upsample", factor=int(d["factor"]))
        raise MalformedSpec(f"unknown layer kind {d.get('kind')!r}")


@dataclass
class ReconstructorSpec:
    input_shape: tuple           # (w, h, c)
    layers: list                 # of LayerSpec
    params: RingParams = field(default_factory=RingParams)
    user_id: int = 0

    @property
    def total_layers(self) -> int:
        return len(self.layers)

    def layer_shapes(self) -> list[tuple]:
        """Feature-map shape after each layer; raises on inconsistency."""
        shape = tuple(self.input_shape)
        if len(shape) != 3 or any(s < 1 for s in shape):
            raise MalformedSpec(f"bad input shape {shape}")
        out = []
        for i, layer in enumerate(self.layers):
            w, h, c = shape
            if layer.kind == "conv":
                kw, kh, ci, co = layer.kernel
                if min(kw, kh, ci, co) < 1:
                    raise MalformedSpec(f"layer {i}: bad kernel {layer.kernel}")
                if ci != c:
                    raise MalformedSpec(
                        f"layer {i}: kernel expects {ci} channels, input has {c}"
                    )
                if layer.stride < 1:
                    raise MalformedSpec(f"layer {i}: bad stride {layer.stride}")
                if layer.padding != "same":
                    raise MalformedSpec(f"layer {i}: only SAME padding is supported")
                if layer.activation not in ("lrelu", "none"):
                    raise MalformedSpec(f"layer {i}: bad activation {layer.activation}")
                if layer.activation == "lrelu" and not (
                    1 <= layer.alpha_shift < self.params.k
                ):
                    raise MalformedSpec(f"layer {i}: bad alpha_shift")
                shape = (
                    conv_out_dim(w, layer.stride),
                    conv_out_dim(h, layer.stride),
                    co,
                )
            elif layer.kind == "upsample":
                if layer.factor < 1:
                    raise MalformedSpec(f"layer {i}: bad upsample factor")
                shape = (w * layer.factor, h * layer.factor, c)
            else:
                raise MalformedSpec(f"layer {i}: unknown kind {layer.kind!r}")
            out.append(shape)
        return out

    def manifest(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "user_id": self.user_id,
            "k": self.params.k,
            "f": self.params.f,
            "normalization": NORMALIZATION,
            "input_shape": list(self.input_shape),
            "layers": [l.to_manifest() for l in self.layers],
        }

    def manifest_bytes(self) -> bytes:
        return json.dumps(self.manifest(), sort_keys=True, separators=(",", ":")).encode()

    def manifest_sha(self) -> bytes:
        return hashlib.sha256(self.manifest_bytes()).digest()

    @staticmethod
    def from_manifest(d: dict) -> "ReconstructorSpec":
        try:
            return ReconstructorSpec(
                input_shape=tuple(d["input_shape"]),
                layers=[LayerSpec.from_manifest(l) for l in d["layers"]],
                params=RingParams(int(d["k"]), int(d["f"])),
                user_id=int(d["user_id"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedSpec(f"bad manifest: {exc}") from exc


def validate_undercomplete(spec: ReconstructorSpec) -> None:
    """Provider-side architecture check; raises MalformedSpec on rejection.

    Accepts only when some internal feature map is strictly smaller than
    the input (bottleneck) and the final output restores the input shape.
    """
    shapes = spec.layer_shapes()
    in_count = int(np.prod(spec.input_shape))
    if shapes[-1] != tuple(spec.input_shape):
        raise MalformedSpec(
            f"output shape {shapes[-1]} does not restore input {tuple(spec.input_shape)}"
        )
    bottleneck = min(int(np.prod(s)) for s in shapes)
    if bottleneck >= in_count:
        raise MalformedSpec(
            f"no bottleneck: smallest feature map {bottleneck} >= input {in_count} "
            "(over-complete architectures can learn the identity copy)"
        )


@dataclass
class WeightSet:
    spec: ReconstructorSpec
    kernels: list                # ring uint64 arrays per conv layer
    biases: list                 # ring uint64 arrays or None, per conv layer

    def conv_layers(self):
        return [l for l in self.spec.layers if l.kind == "conv"]


def quantize_weights(spec: ReconstructorSpec, float_kernels, float_biases=None) -> WeightSet:
    """Fixed-point encode trained float weights; errors name the layer."""
    convs = [l for l in spec.layers if l.kind == "conv"]
    if len(float_kernels) != len(convs):
        raise MalformedSpec(
            f"{len(float_kernels)} kernel tensors for {len(convs)} conv layers"
        )
    kernels, biases = [], []
    for i, (layer, kern) in enumerate(zip(convs, float_kernels)):
        kern = np.asarray(kern, dtype=np.float64)
        if kern.shape != layer.kernel:
            raise MalformedSpec(
                f"conv layer {i}: kernel shape {kern.shape} != spec {layer.kernel}"
            )
        try:
            kernels.append(encode(kern, spec.params))
        except OverflowError as exc:
            raise OverflowError(f"conv layer {i} kernel: {exc}") from exc
        b = None
        if layer.bias:
            if float_biases is None or float_biases[i] is None:
                raise MalformedSpec(f"conv layer {i} declares a bias but none given")
            try:
                b = encode(np.asarray(float_biases[i], np.float64), spec.params)
            except OverflowError as exc:
                raise OverflowError(f"conv layer {i} bias: {exc}") from exc
            if b.shape != (layer.kernel[3],):
                raise MalformedSpec(f"conv layer {i}: bias shape {b.shape}")
        biases.append(b)
    return WeightSet(spec, kernels, biases)


def dequantize_weights(ws: WeightSet):
    kernels = [decode(kkern, ws.spec.params) for kkern in ws.kernels]
    biases = [None if b is None else decode(b, ws.spec.params) for b in ws.biases]
    return kernels, biases


# ---------------------------------------------------------------------------
# directory io


def _write_weight_blob(path: Path, manifest_sha: bytes, tensors) -> None:
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(manifest_sha)
        for arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<u8").tobytes())


def _read_weight_blob(path: Path, spec: ReconstructorSpec):
    blob = Path(path).read_bytes()
    if blob[:8] != WEIGHT_MAGIC:
        raise DecodeError(f"{path}: bad weight file magic")
    if blob[8:40] != spec.manifest_sha():
        raise ManifestMismatch(f"{path}: weight file bound to a different manifest")
    off = 40
    kernels, biases = [], []
    for layer in spec.layers:
        if layer.kind != "conv":
            continue
        n = int(np.prod(layer.kernel))
        kern = np.frombuffer(blob, dtype="<u8", count=n, offset=off).copy()
        off += 8 * n
        kernels.append((kern & spec.params.mask).reshape(layer.kernel))
        if layer.bias:
            co = layer.kernel[3]
            b = np.frombuffer(blob, dtype="<u8", count=co, offset=off).copy()
            off += 8 * co
            biases.append(b & spec.params.mask)
        else:
            biases.append(None)
    if off != len(blob):
        raise DecodeError(f"{path}: {len(blob) - off} trailing bytes")
    return kernels, biases


def save_model_dir(path, ws: WeightSet) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "model.json").write_bytes(ws.spec.manifest_bytes())
    tensors = []
    for kern, b in zip(ws.kernels, ws.biases):
        tensors.append(kern)
        if b is not None:
            tensors.append(b)
    _write_weight_blob(path / "weights.bin", ws.spec.manifest_sha(), tensors)


def load_spec(path) -> ReconstructorSpec:
    raw = (Path(path) / "model.json").read_bytes()
    try:
        manifest = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedSpec(f"model.json: {exc}") from exc
    spec = ReconstructorSpec.from_manifest(manifest)
    if json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode() != raw:
        # manifests are stored canonically so the SHA binding is stable
        raise ManifestMismatch(f"{path}: model.json is not in canonical form")
    return spec


def load_model_dir(path) -> WeightSet:
    spec = load_spec(path)
    kernels, biases = _read_weight_blob(Path(path) / "weights.bin", spec)
    return WeightSet(spec, kernels, biases)


@dataclass
class WeightShares:
    """One party's share of every layer of one reconstructor."""

    spec: ReconstructorSpec
    owner: str
    kernels: list                # ShareTensor per conv layer
    biases: list                 # ShareTensor or None per conv layer


def share_weights(ws: WeightSet, rng: RandomSource, session: str = "local"):
    """Run the sharing protocol over every layer tensor."""
    validate_undercomplete(ws.spec)
    k1, k2, b1, b2 = [], [], [], []
    for kern, b in zip(ws.kernels, ws.biases):
        s1, s2 = share(kern, ws.spec.params, rng, session)
        k1.append(s1)
        k2.append(s2)
        if b is None:
            b1.append(None)
            b2.append(None)
        else:
            t1, t2 = share(b, ws.spec.params, rng, session)
            b1.append(t1)
            b2.append(t2)
    return (
        WeightShares(ws.spec, "s1", k1, b1),
        WeightShares(ws.spec, "s2", k2, b2),
    )


def save_share_dir(path, shares: WeightShares) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "model.json").write_bytes(shares.spec.manifest_bytes())
    tensors = []
    for kern, b in zip(shares.kernels, shares.biases):
        tensors.append(kern.data)
        if b is not None:
            tensors.append(b.data)
    _write_weight_blob(
        path / f"weights.{shares.owner}.bin", shares.spec.manifest_sha(), tensors
    )


def load_share_dir(path, owner: str, session: str = "local") -> WeightShares:
    spec = load_spec(path)
    kernels, biases = _read_weight_blob(Path(path) / f"weights.{owner}.bin", spec)
    ks = [ShareTensor(kk, spec.params, owner, session) for kk in kernels]
    bs = [
        None if b is None else ShareTensor(b, spec.params, owner, session)
        for b in biases
    ]
    return WeightShares(spec, owner, ks, bs)


def triple_requests_for(spec: ReconstructorSpec) -> list[tuple[str, tuple, int]]:
    """Triples one prediction against this reconstructor consumes."""
    requests = []
    shape = tuple(spec.input_shape)
    for layer, out_shape in zip(spec.layers, spec.layer_shapes()):
        if layer.kind == "conv":
            requests.append(("matmul", conv_mul_op_shape(shape, layer.kernel, layer.stride), 1))
        shape = out_shape
    requests.append(("mul", (int(np.prod(spec.input_shape)),), 1))
    return requests
