import json

import numpy as np
import pytest

from privedge.errors import MalformedSpec, ManifestMismatch
from privedge.fixedpoint import RingParams, decode
from privedge.model import (
    ReconstructorSpec,
    dequantize_weights,
    load_model_dir,
    load_share_dir,
    quantize_weights,
    save_model_dir,
    save_share_dir,
    share_weights,
    triple_requests_for,
    validate_undercomplete,
)
from privedge.rng import RandomSource
from privedge.sharing import reconstruct

from harness import conv, desk_spec, random_weights, up

P64 = RingParams(64, 16)


def test_desk_spec_is_valid():
    spec = desk_spec()
    validate_undercomplete(spec)
    shapes = spec.layer_shapes()
    assert shapes[-1] == (16, 16, 1)
    assert min(int(np.prod(s)) for s in shapes) == 32  # 2x2x8 bottleneck


def test_accepts_documented_example():
    # 16x16x1 input with a 4x4x4 bottleneck: 64 < 256
    spec = ReconstructorSpec(
        (16, 16, 1),
        [
            conv((3, 3, 1, 4), stride=4, activation="lrelu"),
            up(4),
            conv((3, 3, 4, 1)),
        ],
        P64,
    )
    assert [int(np.prod(s)) for s in spec.layer_shapes()][0] == 64
    validate_undercomplete(spec)


def test_rejects_no_bottleneck():
    spec = ReconstructorSpec(
        (4, 4, 1),
        [conv((3, 3, 1, 1), stride=1)],
        P64,
    )
    with pytest.raises(MalformedSpec, match="bottleneck"):
        validate_undercomplete(spec)


def test_rejects_output_shape_change():
    spec = ReconstructorSpec(
        (4, 4, 1),
        [conv((3, 3, 1, 2), stride=2)],
        P64,
    )
    with pytest.raises(MalformedSpec, match="restore"):
        validate_undercomplete(spec)


def test_monotone_shrinking_bottleneck():
    # accepting architecture stays accepted as the bottleneck shrinks
    for ch in (3, 2, 1):
        spec = ReconstructorSpec(
            (8, 8, 1),
            [
                conv((3, 3, 1, ch), stride=2, activation="lrelu"),
                up(),
                conv((3, 3, ch, 1)),
            ],
            P64,
        )
        validate_undercomplete(spec)


def test_channel_chain_mismatch():
    spec = ReconstructorSpec(
        (4, 4, 1),
        [conv((3, 3, 2, 1), stride=2), up(), conv((1, 1, 1, 1))],
        P64,
    )
    with pytest.raises(MalformedSpec, match="channels"):
        spec.layer_shapes()


def test_quantize_zero_and_identity():
    spec = ReconstructorSpec(
        (4, 4, 1),
        [conv((1, 1, 1, 1), stride=2), up(), conv((1, 1, 1, 1))],
        P64,
    )
    ws = quantize_weights(spec, [np.zeros((1, 1, 1, 1)), np.ones((1, 1, 1, 1))])
    assert np.all(ws.kernels[0] == 0)
    assert ws.kernels[1].ravel()[0] == 65536


def test_quantize_roundtrip_random():
    spec = desk_spec()
    rng = np.random.default_rng(3)
    ws = random_weights(spec, rng)
    kernels, _ = dequantize_weights(ws)
    floats = [decode(kk, P64) for kk in ws.kernels]
    for a, b in zip(kernels, floats):
        assert np.array_equal(a, b)
    # dequantized values sit within half a quantization step of the floats
    conv_layers = [l for l in spec.layers if l.kind == "conv"]
    fresh = random_weights(spec, np.random.default_rng(3))
    for layer, kern in zip(conv_layers, dequantize_weights(fresh)[0]):
        assert kern.shape == layer.kernel


def test_quantize_overflow_names_layer():
    spec = ReconstructorSpec(
        (4, 4, 1),
        [conv((1, 1, 1, 1), stride=2), up(), conv((1, 1, 1, 1))],
        P64,
    )
    with pytest.raises(OverflowError, match="conv layer 1"):
        quantize_weights(spec, [np.zeros((1, 1, 1, 1)), np.full((1, 1, 1, 1), 2.0**50)])


def test_model_dir_roundtrip(tmp_path):
    spec = desk_spec(user_id=7)
    ws = random_weights(spec, np.random.default_rng(5))
    save_model_dir(tmp_path / "m", ws)
    loaded = load_model_dir(tmp_path / "m")
    assert loaded.spec.manifest() == spec.manifest()
    for a, b in zip(loaded.kernels, ws.kernels):
        assert np.array_equal(a, b)


def test_weight_blob_binds_manifest(tmp_path):
    spec = desk_spec(user_id=7)
    ws = random_weights(spec, np.random.default_rng(5))
    save_model_dir(tmp_path / "m", ws)
    manifest = json.loads((tmp_path / "m" / "model.json").read_text())
    manifest["user_id"] = 8
    (tmp_path / "m" / "model.json").write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    )
    with pytest.raises(ManifestMismatch):
        load_model_dir(tmp_path / "m")


def test_share_dirs_reconstruct(tmp_path):
    spec = desk_spec(user_id=3)
    ws = random_weights(spec, np.random.default_rng(6))
    rng = RandomSource(8)
    sh1, sh2 = share_weights(ws, rng, "sess")
    save_share_dir(tmp_path / "m", sh1)
    save_share_dir(tmp_path / "m", sh2)
    l1 = load_share_dir(tmp_path / "m", "s1", "sess")
    l2 = load_share_dir(tmp_path / "m", "s2", "sess")
    for a, b, want in zip(l1.kernels, l2.kernels, ws.kernels):
        assert np.array_equal(reconstruct(a, b), want)


def test_triple_requests_counts():
    spec = desk_spec()
    reqs = triple_requests_for(spec)
    kinds = [k for k, _, _ in reqs]
    assert kinds.count("matmul") == 6  # one per conv layer
    assert kinds.count("mul") == 1
    assert reqs[-1] == ("mul", (256,), 1)
