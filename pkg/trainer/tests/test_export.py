"""Export-format compatibility against the prediction engine's loader."""

import json

import numpy as np
import pytest

from privedge_trainer.export import dequantize, export_model, quantize, reload_kernels
from privedge_trainer.ran import RanModel, TrainConfig

import privedge.model as engine_model
from privedge.fixedpoint import RingParams, encode as engine_encode


def test_quantize_matches_engine_encoding():
    vals = np.random.default_rng(0).uniform(-7, 7, 1000)
    for k, f in ((64, 16), (32, 12), (32, 10)):
        ours = quantize(vals, k, f)
        theirs = engine_encode(vals, RingParams(k, f))
        assert np.array_equal(ours, theirs)


def test_quantize_roundtrip():
    vals = np.random.default_rng(1).uniform(-3, 3, 500)
    got = dequantize(quantize(vals, 64, 16), 64, 16)
    assert np.max(np.abs(got - vals)) <= 2.0**-16


def test_quantize_overflow():
    with pytest.raises(OverflowError):
        quantize(np.array([2.0**50]), 64, 16)


def test_exported_dir_loads_in_engine(tmp_path):
    model = RanModel(config=TrainConfig(seed=7))
    out = export_model(model, tmp_path / "m", user_id=4, k=64, f=16)
    ws = engine_model.load_model_dir(out)
    assert ws.spec.user_id == 4
    assert ws.spec.params == RingParams(64, 16)
    engine_model.validate_undercomplete(ws.spec)
    # kernels round-trip bit-exactly through the engine's reader
    for conv, kern in zip(model.R.convs, ws.kernels):
        assert np.array_equal(quantize(conv.kernel, 64, 16), kern)
    # and our own reader agrees with our writer
    ours = reload_kernels(out, model.recon_defs, 64, 16)
    for conv, kern in zip(model.R.convs, ours):
        assert np.max(np.abs(conv.kernel - kern)) <= 2.0**-16


def test_manifest_is_canonical_for_engine(tmp_path):
    model = RanModel(config=TrainConfig(seed=9))
    out = export_model(model, tmp_path / "m", user_id=2, k=32, f=10)
    spec = engine_model.load_spec(out)
    assert spec.manifest_bytes() == (out / "model.json").read_bytes()


def test_engine_rejects_tampered_export(tmp_path):
    model = RanModel(config=TrainConfig(seed=3))
    out = export_model(model, tmp_path / "m", user_id=1)
    manifest = json.loads((out / "model.json").read_text())
    manifest["user_id"] = 99
    (out / "model.json").write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ":"))
    )
    with pytest.raises(engine_model.ManifestMismatch):
        engine_model.load_model_dir(out)
