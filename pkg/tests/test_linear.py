import numpy as np
from scipy.stats import chisquare

from privedge.beaver import _deal_one
from privedge.fixedpoint import (
    RingParams,
    encode,
    ring_matmul,
    ring_mul,
    trunc_pair,
)
from privedge.linear import (
    conv_mul_op_shape,
    im2col,
    secure_conv,
    secure_matmul,
    secure_mul,
    upsample_nn,
)
from privedge.net import PartyChannel, QueueLink
from privedge.rng import RandomSource
from privedge.sharing import reconstruct, share

from conftest import run_parties

P8 = RingParams(8, 3)
P64 = RingParams(64, 16)


def channel_pair(session_id=1):
    a, b = QueueLink.pair()
    return PartyChannel(a, session_id), PartyChannel(b, session_id)


def run_mul(x, w, params, rng, kind="mul", op_shape=None):
    """Drive one secure multiplication end to end, returning both z shares."""
    op_shape = op_shape or x.shape
    x1, x2 = share(x, params, rng, "t")
    w1, w2 = share(w, params, rng, "t")
    t1, t2 = _deal_one(kind, op_shape, params, rng, "t")
    c1, c2 = channel_pair()
    fn = secure_mul if kind == "mul" else secure_matmul
    z1, z2 = run_parties(
        lambda: fn(x1, w1, t1, c1),
        lambda: fn(x2, w2, t2, c2),
    )
    return reconstruct(z1, z2)


def test_secure_mul_exhaustive_k8_sample():
    # full exhaustive sweep lives in the acceptance suite; spot rows here
    rng = RandomSource(17)
    w = np.arange(256, dtype=np.uint64)
    for xval in (0, 1, 7, 128, 255):
        x = np.full(256, xval, dtype=np.uint64)
        got = run_mul(x, w, P8, rng)
        assert np.array_equal(got, ring_mul(x, w, P8))


def test_secure_mul_zero_x():
    rng = RandomSource(18)
    x = np.zeros(16, np.uint64)
    w = rng.ring_uniform(16, P64)
    assert np.array_equal(run_mul(x, w, P64, rng), np.zeros(16, np.uint64))


def test_secure_matmul_random_k64():
    rng = RandomSource(19)
    for _ in range(50):
        x = rng.ring_uniform((2, 2), P64)
        w = rng.ring_uniform((2, 2), P64)
        got = run_mul(x, w, P64, rng, kind="matmul", op_shape=(2, 2, 2))
        assert np.array_equal(got, ring_matmul(x, w, P64))


def test_secure_mul_message_count():
    rng = RandomSource(23)
    x = rng.ring_uniform(8, P64)
    w = rng.ring_uniform(8, P64)
    x1, x2 = share(x, P64, rng, "t")
    w1, w2 = share(w, P64, rng, "t")
    t1, t2 = _deal_one("mul", (8,), P64, rng, "t")
    a, b = QueueLink.pair()
    c1, c2 = PartyChannel(a, 5), PartyChannel(b, 5)
    run_parties(
        lambda: secure_mul(x1, w1, t1, c1),
        lambda: secure_mul(x2, w2, t2, c2),
    )
    assert a.frames_sent == 1 and b.frames_sent == 1


def test_opened_masks_uniform():
    # E = x - U with U fresh per triple is uniform whatever x is
    rng = RandomSource(2718)
    n = 200_000
    x = np.full(n, 200, dtype=np.uint64)
    t1, t2 = _deal_one("mul", (n,), P8, rng, "t")
    e = (x - (t1.u.data + t2.u.data)) & P8.mask
    counts = np.bincount(e.astype(np.int64), minlength=256)
    _, p = chisquare(counts)
    assert p > 0.01


def test_im2col_shapes_same_padding():
    x = np.arange(16, dtype=np.uint64).reshape(4, 4, 1)
    cols, ow, oh = im2col(x, 3, 3, 2)
    assert (ow, oh) == (2, 2)
    assert cols.shape == (4, 9)
    cols, ow, oh = im2col(x, 1, 1, 1)
    assert cols.shape == (16, 1)
    assert np.array_equal(cols.ravel(), x.ravel())


def run_conv(x, kernel, stride, params, rng, bias=None):
    x1, x2 = share(x, params, rng, "t")
    k1, k2 = share(kernel, params, rng, "t")
    op = conv_mul_op_shape(x.shape, kernel.shape, stride)
    t1, t2 = _deal_one("matmul", op, params, rng, "t")
    if bias is not None:
        b1, b2 = share(bias, params, rng, "t")
    else:
        b1 = b2 = None
    c1, c2 = channel_pair()
    z1, z2 = run_parties(
        lambda: secure_conv(x1, k1, stride, t1, c1, bias=b1),
        lambda: secure_conv(x2, k2, stride, t2, c2, bias=b2),
    )
    return z1, z2


def reference_conv_ring(x, kernel, stride, params):
    """Plain-ring conv via im2col + matmul + canonical pair truncation oracle.

    Mirrors the share-wise truncation exactly by splitting the raw result
    with the same shares the protocol produced; here we only need the
    value-level check so we use trunc_pair on a fresh random split.
    """
    kw, kh, ci, co = kernel.shape
    cols, ow, oh = im2col(x, kw, kh, stride)
    raw = ring_matmul(cols, kernel.reshape(kw * kh * ci, co), params)
    return raw.reshape(ow, oh, co)


def test_conv_identity_kernel():
    rng = RandomSource(5)
    x = encode(np.random.default_rng(0).uniform(0, 1, (4, 4, 1)), P64)
    kernel = encode(np.ones((1, 1, 1, 1)), P64)
    z1, z2 = run_conv(x, kernel, 1, P64, rng)
    got = reconstruct(z1, z2)
    # 1x1 identity kernel: output = input exactly (truncation of x*2^f is exact)
    assert np.array_equal(got, x)


def test_conv_zero_kernel():
    rng = RandomSource(6)
    x = rng.ring_uniform((4, 4, 2), P64)
    kernel = np.zeros((3, 3, 2, 3), np.uint64)
    z1, z2 = run_conv(x, kernel, 2, P64, rng)
    got = reconstruct(z1, z2)
    assert np.array_equal(got, np.zeros_like(got))


def test_conv_matches_lowering_with_sharewise_trunc():
    rng = RandomSource(7)
    float_rng = np.random.default_rng(1)
    x = encode(float_rng.uniform(-1, 1, (4, 4, 1)), P64)
    kernel = encode(float_rng.uniform(-1, 1, (3, 3, 1, 2)), P64)
    z1, z2 = run_conv(x, kernel, 2, P64, rng)
    raw = reference_conv_ring(x, kernel, 2, P64)
    # the protocol's share-wise truncation reproduces trunc_pair on its shares
    got = reconstruct(z1, z2)
    want = trunc_pair(
        raw.reshape(-1) * 0, raw.reshape(-1), P64
    )  # zero/raw split: s2 holds everything
    # value check within 1 ulp of canonical truncation instead of bit-exact here
    from privedge.fixedpoint import to_signed, truncate

    diff = to_signed((got.reshape(-1) - truncate(raw.reshape(-1), P64)) & P64.mask, P64)
    assert np.abs(diff).max() <= 1


def test_conv_bias():
    rng = RandomSource(8)
    x = encode(np.zeros((2, 2, 1)), P64)
    kernel = encode(np.zeros((1, 1, 1, 2)), P64)
    bias = encode(np.array([0.5, -0.25]), P64)
    z1, z2 = run_conv(x, kernel, 1, P64, rng, bias=bias)
    got = reconstruct(z1, z2)
    assert np.array_equal(got[0, 0], bias)


def test_upsample_identity_and_block():
    rng = RandomSource(9)
    x = rng.ring_uniform((1, 1, 1), P64)
    x1, x2 = share(x, P64, rng, "t")
    assert np.array_equal(upsample_nn(x1, 1).data, x1.data)
    u1 = upsample_nn(x1, 2)
    u2 = upsample_nn(x2, 2)
    got = reconstruct(u1, u2)
    assert got.shape == (2, 2, 1)
    assert np.all(got == x[0, 0, 0])


def test_upsample_commutes_with_reconstruct():
    rng = RandomSource(10)
    x = rng.ring_uniform((4, 4, 3), P64)
    x1, x2 = share(x, P64, rng, "t")
    got = reconstruct(upsample_nn(x1, 2), upsample_nn(x2, 2))
    want = np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)
    assert np.array_equal(got, want)


def test_secure_conv_matrix_matches_direct_oracle():
    # full config matrix: strides x kernels x channels, bit-exact via the
    # recorded truncation masks (direct-loop oracle, no im2col shared code)
    from privedge.fixedpoint import ring_add, ring_sub, trunc_share
    from privedge.net import Session
    from privedge.oracle import conv_direct

    rng = RandomSource(77)
    frng = np.random.default_rng(7)
    for stride in (1, 2):
        for ks in (1, 3, 4):
            for c_in in (1, 2, 3):
                for c_out in (1, 2):
                    x = encode(frng.uniform(-1, 1, (4, 4, c_in)), P64)
                    kern = encode(
                        frng.uniform(-1, 1, (ks, ks, c_in, c_out)) / ks, P64
                    )
                    x1, x2 = share(x, P64, rng, "t")
                    k1, k2 = share(kern, P64, rng, "t")
                    op = conv_mul_op_shape(x.shape, kern.shape, stride)
                    t1, t2 = _deal_one("matmul", op, P64, rng, "t")
                    c1, c2 = channel_pair()
                    sess = Session(1, P64, "s1", state="online", trace_enabled=True)
                    lane = sess.lane(0)
                    z1, z2 = run_parties(
                        lambda: secure_conv(x1, k1, stride, t1, c1, lane=lane),
                        lambda: secure_conv(x2, k2, stride, t2, c2),
                    )
                    got = reconstruct(z1, z2)
                    raw = conv_direct(x, kern, stride, P64)
                    mask = sess.trace[0][0][1].reshape(raw.shape)
                    want = ring_add(
                        trunc_share(mask, "s1", P64),
                        trunc_share(ring_sub(raw, mask, P64), "s2", P64),
                        P64,
                    )
                    assert np.array_equal(got, want), (stride, ks, c_in, c_out)
