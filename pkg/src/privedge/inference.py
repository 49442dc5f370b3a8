"""Private prediction orchestration across all registered reconstructors.

For each registered model the parties run the per-layer protocols
(convolution by masked multiplication, activation by garbled circuit),
square and sum the reconstruction error under sharing, and finally feed
all dissimilarity shares plus the threshold shares into one argmin
garbled circuit. Only that circuit's winner index and threshold flag are
ever decoded; the per-class dissimilarities stay shared unless the
test-only reveal flag is set.

Per-model sub-sessions are independent: they use disjoint channels,
disjoint triple queues and derived randomness streams, so they may run
sequentially or in parallel threads with identical transcripts.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass

import numpy as np

from .beaver import TripleStore
from .errors import ProtocolAborted, ShapeMismatch, TripleExhausted
from .garbled.ot import DEFAULT_MODULUS_BITS, OtKeyPair, generate_keys
from .garbled.protocol import (
    argmin_evaluator,
    argmin_garbler,
    lrelu_evaluator,
    lrelu_garbler,
)
from .linear import (
    conv_mul_op_shape,
    secure_conv,
    secure_mul,
    trunc_with_trace,
    upsample_nn,
)
from .model import WeightShares, triple_requests_for
from .net import PartyChannel, Session
from .rng import RandomSource
from .sharing import ShareTensor, local_sub, reconstruct


@dataclass
class PredictionRequest:
    uploader: int
    image: ShareTensor          # this party's share of the test image
    tau: ShareTensor            # this party's share of the privacy threshold
    session_id: int


@dataclass
class PredictionResult:
    outcome: int | None         # matched user id, or None
    decision: str               # "allow" | "block"
    index: int
    flag: bool
    dissimilarities: list | None = None  # test-only reveal, else None


@dataclass
class PredictConfig:
    ot_modulus_bits: int = DEFAULT_MODULUS_BITS
    parallel: bool = False
    reveal_dissimilarities: bool = False  # test-only; must stay off in production
    lrelu_alpha_mode: str = "shift"       # "shift" (in-circuit) or "local" scaling


@dataclass
class PredictionChannels:
    per_model: list             # PartyChannel per registered model
    final: PartyChannel


class _PrefetchedTriples:
    """A sub-session's private slice of the offline budget.

    Drawing every model's triples from the shared store in model order
    before any thread starts keeps parallel and sequential executions on
    identical correlated randomness, so their transcripts match.
    """

    def __init__(self, store: TripleStore, requests):
        self._queues: dict = {}
        for kind, shape, count in requests:
            q = self._queues.setdefault((kind, tuple(shape)), deque())
            for _ in range(count):
                q.append(store.take(kind, shape))

    def take(self, kind: str, op_shape: tuple):
        q = self._queues.get((kind, tuple(op_shape)))
        if not q:
            raise TripleExhausted(
                f"sub-session budget exhausted for {kind} triple of shape {op_shape}"
            )
        return q.popleft()


def private_reconstruct(
    role: str,
    image: ShareTensor,
    weights: WeightShares,
    store,
    channel: PartyChannel,
    rng: RandomSource,
    ot_keys: OtKeyPair | None,
    lane=None,
    alpha_mode: str = "shift",
) -> ShareTensor:
    """Evaluate one reconstructor over shares, layer by layer."""
    spec = weights.spec
    if image.shape != tuple(spec.input_shape):
        raise ShapeMismatch(f"image {image.shape} vs spec input {spec.input_shape}")
    x = image
    conv_i = 0
    for li, layer in enumerate(spec.layers):
        if layer.kind == "upsample":
            x = upsample_nn(x, layer.factor)
            continue
        op_shape = conv_mul_op_shape(x.shape, layer.kernel, layer.stride)
        triple = store.take("matmul", op_shape)
        x = secure_conv(
            x,
            weights.kernels[conv_i],
            layer.stride,
            triple,
            channel,
            bias=weights.biases[conv_i],
            lane=lane,
            tag=f"conv{li}",
        )
        if layer.activation == "lrelu":
            if role == "s1":
                x = lrelu_garbler(x, layer.alpha_shift, channel, rng, ot_keys, alpha_mode)
            else:
                x = lrelu_evaluator(x, layer.alpha_shift, channel, rng, alpha_mode)
        conv_i += 1
    return x


def secure_dissimilarity(
    image: ShareTensor,
    recon: ShareTensor,
    store,
    channel: PartyChannel,
    lane=None,
) -> ShareTensor:
    """Shares of the summed squared reconstruction error (scalar)."""
    if image.shape != recon.shape:
        raise ShapeMismatch("image and reconstruction shapes differ")
    o = local_sub(image.flatten(), recon.flatten())
    n = o.data.size
    triple = store.take("mul", (n,))
    z = secure_mul(o, o, triple, channel)
    z = trunc_with_trace(z, lane, "dissimilarity")
    with np.errstate(over="ignore"):
        d = np.uint64(z.data.sum(dtype=np.uint64) & z.params.mask)
    return ShareTensor(np.array([d], dtype=np.uint64), z.params, z.owner, z.session)


def predict(
    role: str,
    request: PredictionRequest,
    models: list[WeightShares],
    store: TripleStore,
    channels: PredictionChannels,
    rng: RandomSource,
    config: PredictConfig | None = None,
    session: Session | None = None,
) -> PredictionResult:
    """One party's side of the full private prediction."""
    config = config or PredictConfig()
    if not models:
        raise ShapeMismatch("no registered models")
    if len(channels.per_model) != len(models):
        raise ShapeMismatch("need one channel per registered model")
    if request.tau.data.size != 1:
        raise ShapeMismatch("threshold must be a scalar share")
    ot_keys = None
    if role == "s1":
        ot_keys = generate_keys(config.ot_modulus_bits, rng.spawn(0xA11CE))
    # slice the offline budget per sub-session in model order so that
    # concurrent runs consume exactly the triples sequential runs would
    triples = [
        _PrefetchedTriples(store, triple_requests_for(m.spec)) for m in models
    ]
    d_shares: list = [None] * len(models)
    errors: list = []

    def run_model(i: int):
        try:
            sub_rng = rng.spawn(i + 1)
            lane = session.lane(i) if session is not None else None
            recon = private_reconstruct(
                role,
                request.image,
                models[i],
                triples[i],
                channels.per_model[i],
                sub_rng,
                ot_keys,
                lane,
                config.lrelu_alpha_mode,
            )
            d_shares[i] = secure_dissimilarity(
                request.image, recon, triples[i], channels.per_model[i], lane
            )
        except Exception as exc:  # noqa: BLE001 - aborts the whole prediction
            errors.append(exc)
            channels.per_model[i].send_abort(type(exc).__name__)

    if config.parallel and len(models) > 1:
        threads = [
            threading.Thread(target=run_model, args=(i,), daemon=True)
            for i in range(len(models))
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    else:
        for i in range(len(models)):
            run_model(i)
    if errors:
        channels.final.send_abort(type(errors[0]).__name__)
        raise errors[0] if isinstance(errors[0], ProtocolAborted) else ProtocolAborted(
            f"sub-protocol failed: {errors[0]}"
        ) from errors[0]

    params = request.image.params
    d_vec = ShareTensor(
        np.concatenate([d.data for d in d_shares]),
        params,
        request.image.owner,
        request.image.session,
    )
    if role == "s1":
        index, flag = argmin_garbler(
            d_vec, request.tau, channels.final, rng.spawn(0), ot_keys
        )
    else:
        index, flag = argmin_evaluator(d_vec, request.tau, channels.final, rng.spawn(0))
    if not (0 <= index < len(models)):
        raise ProtocolAborted(f"argmin index {index} out of range")
    outcome = models[index].spec.user_id if flag else None
    decision = "block" if (outcome is not None and outcome != request.uploader) else "allow"

    revealed = None
    if config.reveal_dissimilarities:
        # test-only: exchange and reconstruct the dissimilarity shares
        channels.final.send_share_tensor(3, d_vec)
        _, peer = channels.final.recv_share_tensor(
            "s2" if role == "s1" else "s1", d_vec.session
        )
        revealed = [int(v) for v in reconstruct(d_vec, peer)]

    if session is not None:
        session.advance("done")
    return PredictionResult(outcome, decision, index, flag, revealed)
