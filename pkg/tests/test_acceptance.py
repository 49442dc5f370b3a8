"""Acceptance suite: one test per criterion, one printed line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the line per
criterion. Tolerances are pinned here, not configurable.
"""

import time

import numpy as np
import pytest
from scipy.stats import chisquare

from privedge import audit
from privedge.analytics import (
    predict_online_bytes,
    predict_triple_counts,
)
from privedge.beaver import _deal_one
from privedge.errors import PrivEdgeError
from privedge.fixedpoint import RingParams, encode, ring_mul, ring_sub
from privedge.garbled.circuit import (
    argmin_index_width,
    bits_to_vals,
    build_lrelu_circuit,
    vals_to_bits,
)
from privedge.garbled.garbling import (
    build_decode_table,
    decode_bits,
    evaluate,
    garble,
)
from privedge.linear import secure_mul
from privedge.net import FaultyLink, PartyChannel, QueueLink
from privedge.oracle import lrelu_ring, oracle_predict
from privedge.rng import RandomSource
from privedge.sharing import share

from conftest import run_parties
from harness import (
    desk_spec,
    random_small_spec,
    random_weights,
    run_two_party_predict,
    tiny_spec,
)
from privedge.model import quantize_weights

P8 = RingParams(8, 3)
P16 = RingParams(16, 4)
P32 = RingParams(32, 12)


def report(num: int, ok: bool, desc: str, t0: float):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {num}: {status} - {desc} ({time.time() - t0:.1f}s)")


def test_criterion_1_exhaustive_secure_mul_k8():
    """All 65536 scalar products over the wire reconstruct exactly."""
    t0 = time.time()
    ok = False
    try:
        rng = RandomSource(0xC1)
        w = np.arange(256, dtype=np.uint64)
        failures = 0
        for xval in range(256):
            x = np.full(256, xval, dtype=np.uint64)
            x1, x2 = share(x, P8, rng, "acc")
            w1, w2 = share(w, P8, rng, "acc")
            t1, t2 = _deal_one("mul", (256,), P8, rng, "acc")
            la, lb = QueueLink.pair()
            c1, c2 = PartyChannel(la, xval + 1), PartyChannel(lb, xval + 1)
            z1, z2 = run_parties(
                lambda: secure_mul(x1, w1, t1, c1),
                lambda: secure_mul(x2, w2, t2, c2),
            )
            got = (z1.data + z2.data) & P8.mask
            failures += int(np.count_nonzero(got != ring_mul(x, w, P8)))
        elapsed = time.time() - t0
        assert failures == 0
        assert elapsed < 60.0, f"exhaustive sweep took {elapsed:.1f}s (limit 60s)"
        ok = True
    finally:
        report(1, ok, "exhaustive k=8 secure multiplication, 65536 pairs", t0)


def test_criterion_2_garbled_lrelu_10k_k16():
    """Garbled L-ReLU equals the cleartext activation minus the mask."""
    t0 = time.time()
    ok = False
    try:
        n, k, shift = 10_000, 16, 2  # alpha = 0.25
        rng = RandomSource(0xC2)
        z1 = rng.ring_uniform(n, P16)
        z2 = rng.ring_uniform(n, P16)
        rp = rng.ring_uniform(n, P16)
        circ = build_lrelu_circuit(n, k, shift)
        key = bytes(range(16))
        gc = garble(circ, rng, key, nonce=2)
        labels = {
            "z1": gc.input_labels(circ, "z1", vals_to_bits(z1, k).ravel()),
            "rprime": gc.input_labels(circ, "rprime", vals_to_bits(rp, k).ravel()),
            "const": gc.input_labels(circ, "const", np.array([1, 0])),
            "z2": gc.input_labels(circ, "z2", vals_to_bits(z2, k).ravel()),
        }
        wires = evaluate(circ, gc.tables, labels, key, 2)
        table = build_decode_table(gc, circ, "h_minus_r", key)
        bits = decode_bits(circ, "h_minus_r", table, wires, key, 2)
        got = bits_to_vals(bits.reshape(n, k), k)
        want = ring_sub(lrelu_ring((z1 + z2) & P16.mask, shift, P16), rp, P16)
        failures = int(np.count_nonzero(got != want))
        elapsed = time.time() - t0
        assert failures == 0
        assert elapsed < 300.0, f"took {elapsed:.1f}s (limit 300s)"
        ok = True
    finally:
        report(2, ok, "garbled L-ReLU vs cleartext, 10^4 random triples at k=16", t0)


def test_criterion_3_end_to_end_oracle_equivalence():
    """200 random instances: secure (outcome, decision) == lockstep oracle."""
    t0 = time.time()
    ok = False
    try:
        master = np.random.default_rng(0xC3)
        mismatches = 0
        for trial in range(200):
            n_models = int(master.integers(1, 6))
            weight_sets = []
            for i in range(n_models):
                spec = random_small_spec(master, P32, user_id=i + 1)
                weight_sets.append(random_weights(spec, master))
            img_f = master.uniform(0, 1, (16, 16, 1))
            tau_f = float(master.uniform(0.0, 40.0))
            uploader = int(master.integers(1, n_models + 2))
            run = run_two_party_predict(
                weight_sets, img_f, tau_f, uploader, seed=trial, trace=True, ot_bits=512
            )
            traces = {i: run.trace_for(i) for i in range(n_models)}
            outcome, decision, _ = oracle_predict(
                weight_sets,
                encode(img_f, P32),
                int(encode(np.array([tau_f]), P32)[0]),
                uploader,
                mode="lockstep",
                traces=traces,
            )
            if (run.res1.outcome, run.res1.decision) != (outcome, decision):
                mismatches += 1
            if (run.res2.outcome, run.res2.decision) != (outcome, decision):
                mismatches += 1
        elapsed = time.time() - t0
        assert mismatches == 0
        assert elapsed < 600.0, f"took {elapsed:.1f}s (limit 600s)"
        ok = True
    finally:
        report(3, ok, "200-instance end-to-end oracle equivalence", t0)


def test_criterion_4_hiding_uniformity():
    """Shares and opened Beaver masks pass chi-square at alpha = 0.01."""
    t0 = time.time()
    ok = False
    try:
        rng = RandomSource(0xC4)
        # individual shares of a fixed secret, 10^6 samples at k=8
        secret = np.full(1_000_000, 173, dtype=np.uint64)
        s1, s2 = share(secret, P8, rng, "acc")
        rejected = []
        for name, data in (("share-s1", s1.data), ("share-s2", s2.data)):
            counts = np.bincount(data.astype(np.int64), minlength=256)
            _, p = chisquare(counts)
            rejected.append((name, p))
            assert p > 0.01, f"{name} rejected uniformity: p={p}"
        # opened masks E = x - U, F = w - V with fresh triples, fixed x and w
        x = np.full(1_000_000, 200, dtype=np.uint64)
        wv = np.full(1_000_000, 40, dtype=np.uint64)
        ta, tb = _deal_one("mul", (1_000_000,), P8, rng, "acc")
        u = (ta.u.data + tb.u.data) & P8.mask
        v = (ta.v.data + tb.v.data) & P8.mask
        for name, data in (("mask-E", (x - u) & P8.mask), ("mask-F", (wv - v) & P8.mask)):
            counts = np.bincount(data.astype(np.int64), minlength=256)
            _, p = chisquare(counts)
            assert p > 0.01, f"{name} rejected uniformity: p={p}"
        ok = True
    finally:
        report(4, ok, "chi-square uniformity of shares and opened masks", t0)


def test_criterion_5_revealed_information_audit():
    """Exactly ceil(log2 N) + 2 bits decoded; zero secret reconstructions."""
    t0 = time.time()
    ok = False
    try:
        master = np.random.default_rng(0xC5)
        for n_models in (1, 3, 5):
            weight_sets = []
            for i in range(n_models):
                spec = random_small_spec(master, P32, user_id=i + 1)
                weight_sets.append(random_weights(spec, master))
            img = master.uniform(0, 1, (16, 16, 1))
            with audit.audit_scope() as log:
                run_two_party_predict(
                    weight_sets, img, 10.0, 1, seed=n_models, trace=False, ot_bits=512
                )
            ceil_log2 = 0 if n_models == 1 else int(np.ceil(np.log2(n_models)))
            want_bits = ceil_log2 + 2
            assert argmin_index_width(n_models) + 1 == want_bits
            assert log.public_bits == want_bits, (
                f"N={n_models}: decoded {log.public_bits} bits, expected {want_bits}"
            )
            assert log.secret_reconstructs == 0
        ok = True
    finally:
        report(5, ok, "revealed-information audit over N in {1,3,5}", t0)


def _fault_plan(fault_rng):
    """One randomized fault: (party, frame index, action)."""
    action = ("drop", "dup", "hold", "flip")[int(fault_rng.randbelow(4))]
    party = int(fault_rng.randbelow(2))
    index = int(fault_rng.randbelow(14))
    return party, index, action


def test_criterion_6_fault_injection():
    """1000 mangled runs: abort or the correct result, never a wrong one."""
    t0 = time.time()
    ok = False
    try:
        spec = tiny_spec(P16, user_id=1)
        ws = quantize_weights(spec, [np.ones((1, 1, 1, 1)), np.ones((1, 1, 1, 1))])
        img = np.full((2, 2, 1), 0.25)
        # clean reference with the same protocol seed used by every run
        ref = run_two_party_predict([ws], img, 1.0, 1, seed=606, ot_bits=512)
        expected = (ref.res1.outcome, ref.res1.decision)
        assert expected == (1, "allow")
        fault_master = RandomSource(0xC6)
        wrong = aborts = correct = 0
        for run_i in range(1000):
            frng = fault_master.spawn(run_i)
            party, index, action = _fault_plan(frng)

            def factory(i, party=party, index=index, action=action, frng=frng):
                a, b = QueueLink.pair()
                plan = lambda fi: action if fi == index else "ok"  # noqa: E731
                if party == 0:
                    return FaultyLink(a, plan, frng), b
                return a, FaultyLink(b, plan, frng)

            try:
                run = run_two_party_predict(
                    [ws], img, 1.0, 1, seed=606, ot_bits=512,
                    trace=False, link_factory=factory, timeout=0.3,
                )
            except (PrivEdgeError, TimeoutError):
                aborts += 1
                continue
            got = (run.res1.outcome, run.res1.decision)
            got2 = (run.res2.outcome, run.res2.decision)
            if got == expected and got2 == expected:
                correct += 1
            else:
                wrong += 1
        elapsed = time.time() - t0
        assert wrong == 0, f"{wrong} faulted runs produced a wrong prediction"
        assert aborts > 0 and correct > 0  # both outcomes exercised
        ok = True
    finally:
        report(6, ok, "1000-run fault injection (drop/dup/reorder/flip)", t0)


def test_criterion_7_offline_online_accounting():
    """Desk-spec traffic and triple use match the closed-form accounting."""
    t0 = time.time()
    ok = False
    try:
        frng = np.random.default_rng(0xC7)
        params = RingParams(64, 16)
        specs = [desk_spec(params, user_id=1), desk_spec(params, user_id=2)]
        weight_sets = [random_weights(s, frng) for s in specs]
        img = frng.uniform(0, 1, (16, 16, 1))
        run = run_two_party_predict(
            weight_sets, img, 5.0, 1, seed=707, ot_bits=512, trace=False
        )
        want_bytes = predict_online_bytes(specs, mod_bytes=512 // 8)
        assert run.online_bytes == want_bytes, (
            f"measured {run.online_bytes} online bytes, formula {want_bytes}"
        )
        want_triples = predict_triple_counts(specs)
        for store in run.stores:
            assert store.consumed_by_shape == want_triples
            assert store.consumed == sum(want_triples.values())
        ok = True
    finally:
        report(7, ok, "desk-spec online bytes and triple budget, exact", t0)
