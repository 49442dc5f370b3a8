"""In-process loopback execution of a full two-party prediction.

Runs both parties in one process over queue-backed links, with seedable
randomness, which gives deterministic transcripts for CI and local
verification. The real networked deployment in `service` drives the
identical protocol code over TCP.
"""

from __future__ import annotations

import threading

import numpy as np

from .beaver import deal_triples
from .fixedpoint import encode
from .inference import (
    PredictConfig,
    PredictionChannels,
    PredictionRequest,
    predict,
)
from .model import WeightSet, share_weights, triple_requests_for
from .net import PartyChannel, QueueLink, Session
from .rng import RandomSource
from .sharing import share


def run_parties(fn_s1, fn_s2, timeout: float = 120.0):
    """Run both party closures in threads; re-raise either side's error."""
    results: dict = {}
    errors: dict = {}

    def wrap(name, fn):
        try:
            results[name] = fn()
        except BaseException as exc:  # noqa: BLE001 - reported to caller
            errors[name] = exc

    threads = [
        threading.Thread(target=wrap, args=("s1", fn_s1), daemon=True),
        threading.Thread(target=wrap, args=("s2", fn_s2), daemon=True),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout)
    if any(t.is_alive() for t in threads):
        raise TimeoutError("party thread did not finish")
    for name in ("s1", "s2"):
        if name in errors:
            raise errors[name]
    return results["s1"], results["s2"]


class LocalRun:
    """Outcome of one loopback prediction: results, traces, accounting."""

    def __init__(self, res1, res2, session1, links, stores):
        self.res1 = res1
        self.res2 = res2
        self.session1 = session1
        self.links = links
        self.stores = stores

    @property
    def online_bytes(self) -> int:
        return sum(l.bytes_sent for pair in self.links for l in pair)

    def trace_for(self, idx: int) -> dict:
        """Lockstep-oracle masks for one model, split by truncation site."""
        entries = self.session1.trace.get(idx, [])
        return {
            "forward": [e for e in entries if e[0] != "dissimilarity"],
            "dissimilarity": [e for e in entries if e[0] == "dissimilarity"],
        }

    def all_traces(self) -> dict:
        return {i: self.trace_for(i) for i in self.session1.trace}


def run_local_prediction(
    weight_sets: list[WeightSet],
    image_float: np.ndarray,
    tau_float: float,
    uploader: int,
    seed: int | None = 0,
    parallel: bool = False,
    ot_bits: int = 512,
    trace: bool = True,
    reveal: bool = False,
    predictions: int = 1,
    link_factory=None,
    timeout: float = 120.0,
) -> LocalRun:
    """Share inputs, deal triples, and predict across loopback channels."""
    params = weight_sets[0].spec.params
    rng = RandomSource(seed)
    shares = [share_weights(ws, rng, "sess") for ws in weight_sets]
    image = encode(image_float, params)
    tau = encode(np.array([tau_float]), params)
    img1, img2 = share(image, params, rng, "sess")
    tau1, tau2 = share(tau, params, rng, "sess")

    requests = []
    for ws in weight_sets:
        for kind, shape, count in triple_requests_for(ws.spec):
            requests.append((kind, shape, count * predictions))
    store1, store2 = deal_triples(requests, params, rng, "sess")

    make = link_factory or (lambda i: QueueLink.pair())
    links = [make(i) for i in range(len(weight_sets) + 1)]
    chans1 = PredictionChannels(
        per_model=[
            PartyChannel(links[i][0], 100 + i, timeout=timeout)
            for i in range(len(weight_sets))
        ],
        final=PartyChannel(links[-1][0], 99, timeout=timeout),
    )
    chans2 = PredictionChannels(
        per_model=[
            PartyChannel(links[i][1], 100 + i, timeout=timeout)
            for i in range(len(weight_sets))
        ],
        final=PartyChannel(links[-1][1], 99, timeout=timeout),
    )
    cfg = PredictConfig(
        ot_modulus_bits=ot_bits, parallel=parallel, reveal_dissimilarities=reveal
    )
    sess1 = Session(99, params, "s1", state="online", trace_enabled=trace)
    sess2 = Session(99, params, "s2", state="online")
    req1 = PredictionRequest(uploader, img1, tau1, 99)
    req2 = PredictionRequest(uploader, img2, tau2, 99)
    res1, res2 = run_parties(
        lambda: predict(
            "s1", req1, [s[0] for s in shares], store1, chans1, rng.spawn(11), cfg, sess1
        ),
        lambda: predict(
            "s2", req2, [s[1] for s in shares], store2, chans2, rng.spawn(22), cfg, sess2
        ),
        timeout=3 * timeout + 10,
    )
    return LocalRun(res1, res2, sess1, links, (store1, store2))
