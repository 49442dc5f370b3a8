"""Shared helpers: model factories plus the package's loopback runner."""

import numpy as np

from privedge.fixedpoint import RingParams
from privedge.localrun import LocalRun as TwoPartyRun  # noqa: F401
from privedge.localrun import run_local_prediction
from privedge.model import (
    LayerSpec,
    ReconstructorSpec,
    WeightSet,
    quantize_weights,
)


def run_two_party_predict(*args, **kwargs):
    return run_local_prediction(*args, **kwargs)


def conv(kernel, stride=1, activation="none", alpha_shift=2, bias=False):
    return LayerSpec(
        "conv",
        kernel=tuple(kernel),
        stride=stride,
        activation=activation,
        alpha_shift=alpha_shift,
        bias=bias,
    )


def up(factor=2):
    return LayerSpec("upsample", factor=factor)


def desk_spec(params=None, user_id=0) -> ReconstructorSpec:
    """The 6-layer reference architecture on 16x16x1 input."""
    params = params or RingParams(64, 16)
    return ReconstructorSpec(
        input_shape=(16, 16, 1),
        layers=[
            conv((4, 4, 1, 4), stride=2, activation="lrelu"),
            conv((4, 4, 4, 8), stride=2, activation="lrelu"),
            conv((4, 4, 8, 8), stride=2, activation="lrelu"),
            up(),
            conv((4, 4, 8, 8), stride=1, activation="lrelu"),
            up(),
            conv((4, 4, 8, 4), stride=1, activation="lrelu"),
            up(),
            conv((4, 4, 4, 1), stride=1, activation="none"),
        ],
        params=params,
        user_id=user_id,
    )


def tiny_spec(params, user_id=0, kernel=1, activation="lrelu") -> ReconstructorSpec:
    """Minimal valid model on a 2x2 image, for fast fault-injection runs."""
    return ReconstructorSpec(
        input_shape=(2, 2, 1),
        layers=[
            conv((kernel, kernel, 1, 1), stride=2, activation=activation),
            up(),
            conv((kernel, kernel, 1, 1), stride=1),
        ],
        params=params,
        user_id=user_id,
    )


def random_small_spec(frng: np.random.Generator, params, user_id) -> ReconstructorSpec:
    """Random compact under-complete architecture on 16x16x1 input.

    Covers kernels {1,3,4}, strides {1,2}, 1..2 channels and decoders with
    and without activations while keeping the activation element count
    small enough for the per-bit oblivious transfers.
    """
    variant = int(frng.integers(0, 3))
    ks = int(frng.choice([1, 3, 4]))
    c1 = int(frng.integers(1, 3))
    if variant == 1:
        c1 = 1  # deeper stack, keep it narrow
        k2 = int(frng.choice([3, 4]))
        layers = [
            conv((ks, ks, 1, c1), stride=2, activation="lrelu"),
            conv((k2, k2, c1, c1), stride=2, activation="lrelu"),
            up(),
            conv((k2, k2, c1, c1), stride=1, activation="lrelu"),
            up(),
            conv((3, 3, c1, 1), stride=1, activation="none"),
        ]
    elif variant == 2:
        layers = [
            conv((4, 4, 1, 2), stride=2, activation="lrelu"),
            up(),
            conv((ks, ks, 2, 1), stride=1, activation="none"),
        ]
    else:
        layers = [
            conv((ks, ks, 1, c1), stride=2, activation="lrelu"),
            up(),
            conv((3, 3, c1, 1), stride=1, activation="none"),
        ]
    return ReconstructorSpec((16, 16, 1), layers, params, user_id)


def random_weights(spec: ReconstructorSpec, frng: np.random.Generator) -> WeightSet:
    kernels, biases = [], []
    for layer in spec.layers:
        if layer.kind != "conv":
            continue
        fan_in = int(np.prod(layer.kernel[:3]))
        kernels.append(frng.uniform(-1, 1, layer.kernel) / np.sqrt(fan_in))
        biases.append(frng.uniform(-0.1, 0.1, layer.kernel[3]) if layer.bias else None)
    return quantize_weights(spec, kernels, biases)


def tiny_like_identity_16(params, user_id):
    """Block-averaging identity pipeline on 16x16: subsample, upsample, copy."""
    spec = ReconstructorSpec(
        (16, 16, 1),
        [
            conv((1, 1, 1, 1), stride=2, activation="lrelu"),
            up(),
            conv((1, 1, 1, 1), stride=1),
        ],
        params,
        user_id,
    )
    return quantize_weights(spec, [np.ones((1, 1, 1, 1)), np.ones((1, 1, 1, 1))])
