"""Secure linear transformations over additive shares.

Multiplication consumes one Beaver triple and a single masked-value
exchange: each party sends one message carrying E = X - U and F = W - V,
opens the sums, and locally combines

    s1:  Z = F X + E W + Q          (matrix form: Z = X F + E W + Q)
    s2:  Z = -E F + F X + E W + Q

so that the Z shares sum to X*W in the ring at scale 2^(2f). Strided
convolution lowers to im2col followed by this matrix multiplication and a
share-wise truncation. Nearest-neighbour upsampling is purely local.
"""

from __future__ import annotations

import numpy as np

from .beaver import BeaverTriple
from .errors import ShapeMismatch
from .fixedpoint import (
    ring_add,
    ring_matmul,
    ring_mul,
    ring_sub,
    trunc_share,
)
from .net import PartyChannel
from .sharing import ShareTensor

# ---------------------------------------------------------------------------
# im2col lowering


def conv_out_dim(size: int, stride: int) -> int:
    """Output extent under SAME padding: ceil(size / stride)."""
    return -(-size // stride)


def same_padding(size: int, ksize: int, stride: int) -> tuple[int, int]:
    out = conv_out_dim(size, stride)
    total = max((out - 1) * stride + ksize - size, 0)
    lo = total // 2
    return lo, total - lo


def im2col(x: np.ndarray, kw: int, kh: int, stride: int) -> tuple[np.ndarray, int, int]:
    """Lower a [w, h, c] tensor to a patch matrix [out_w*out_h, kw*kh*c].

    Zero pads symmetrically (SAME). Patch columns are ordered (dx, dy, c)
    row-major, matching a [kw, kh, c_in, c_out] kernel reshaped to
    (kw*kh*c_in, c_out).
    """
    w, h, c = x.shape
    pw_lo, pw_hi = same_padding(w, kw, stride)
    ph_lo, ph_hi = same_padding(h, kh, stride)
    padded = np.pad(x, ((pw_lo, pw_hi), (ph_lo, ph_hi), (0, 0)))
    out_w = conv_out_dim(w, stride)
    out_h = conv_out_dim(h, stride)
    cols = np.empty((out_w * out_h, kw * kh * c), dtype=x.dtype)
    col = 0
    for dx in range(kw):
        for dy in range(kh):
            block = padded[
                dx : dx + (out_w - 1) * stride + 1 : stride,
                dy : dy + (out_h - 1) * stride + 1 : stride,
                :,
            ]
            cols[:, col : col + c] = block.reshape(-1, c)
            col += c
    return cols, out_w, out_h


# ---------------------------------------------------------------------------
# Beaver multiplication


def _check_mul_args(x: ShareTensor, w: ShareTensor, triple: BeaverTriple, kind: str):
    if x.owner != w.owner or x.session != w.session:
        raise ShapeMismatch("operands must be the same party's shares of one session")
    if triple.kind != kind:
        raise ShapeMismatch(f"expected a {kind} triple, got {triple.kind}")
    us, vs, _ = triple.tensor_shapes()
    if x.shape != us or w.shape != vs:
        raise ShapeMismatch(
            f"triple shaped {triple.op_shape} does not fit operands {x.shape} x {w.shape}"
        )


def _open_masks(x, w, triple, channel, params):
    e_local = ring_sub(x.data, triple.u.data, params)
    f_local = ring_sub(w.data, triple.v.data, params)
    channel.send_masked_pair(e_local, f_local, params)
    e_peer, f_peer = channel.recv_masked_pair()
    if e_peer.shape != e_local.shape or f_peer.shape != f_local.shape:
        raise ShapeMismatch("peer opened masks of unexpected shape")
    e = ring_add(e_local, e_peer, params)
    f = ring_add(f_local, f_peer, params)
    return e, f


def secure_mul(
    x: ShareTensor, w: ShareTensor, triple: BeaverTriple, channel: PartyChannel
) -> ShareTensor:
    """Elementwise product shares at raw scale 2^(2f); flat tensors."""
    _check_mul_args(x, w, triple, "mul")
    params = x.params
    e, f = _open_masks(x, w, triple, channel, params)
    z = ring_add(
        ring_add(ring_mul(f, x.data, params), ring_mul(e, w.data, params), params),
        triple.q.data,
        params,
    )
    if x.owner == "s2":
        z = ring_sub(z, ring_mul(e, f, params), params)
    return ShareTensor(z, params, x.owner, x.session)


def secure_matmul(
    x: ShareTensor, w: ShareTensor, triple: BeaverTriple, channel: PartyChannel
) -> ShareTensor:
    """Matrix product shares (m,n)@(n,p) at raw scale 2^(2f)."""
    _check_mul_args(x, w, triple, "matmul")
    params = x.params
    e, f = _open_masks(x, w, triple, channel, params)
    z = ring_add(
        ring_add(
            ring_matmul(x.data, f, params), ring_matmul(e, w.data, params), params
        ),
        triple.q.data,
        params,
    )
    if x.owner == "s2":
        z = ring_sub(z, ring_matmul(e, f, params), params)
    return ShareTensor(z, params, x.owner, x.session)


def trunc_with_trace(share_tensor: ShareTensor, lane=None, tag: str = "") -> ShareTensor:
    """Share-wise truncation; s1 records its pre-truncation share.

    The recorded masks let the cleartext oracle replay the exact same
    probabilistic truncation, making equivalence tests bit-exact.
    """
    if lane is not None and share_tensor.owner == "s1":
        lane.record(tag, share_tensor.data)
    out = trunc_share(share_tensor.data, share_tensor.owner, share_tensor.params)
    return ShareTensor(out, share_tensor.params, share_tensor.owner, share_tensor.session)


def secure_conv(
    x: ShareTensor,
    kernel: ShareTensor,
    stride: int,
    triple: BeaverTriple,
    channel: PartyChannel,
    bias: ShareTensor | None = None,
    lane=None,
    tag: str = "conv",
) -> ShareTensor:
    """Strided SAME convolution of a [w,h,c] share with a [kw,kh,ci,co] kernel.

    im2col lowering, one secure matrix multiplication, share-wise
    truncation back to scale 2^f, then an optional local bias add.
    """
    if stride < 1:
        raise ShapeMismatch("stride must be >= 1")
    w, h, c = x.shape
    kw, kh, ci, co = kernel.shape
    if ci != c:
        raise ShapeMismatch(f"kernel expects {ci} input channels, tensor has {c}")
    cols, out_w, out_h = im2col(x.data, kw, kh, stride)
    x_mat = ShareTensor(cols, x.params, x.owner, x.session)
    w_mat = kernel.reshape((kw * kh * ci, co))
    z = secure_matmul(x_mat, w_mat, triple, channel)
    z = trunc_with_trace(z, lane, tag)
    out = z.reshape((out_w, out_h, co))
    if bias is not None:
        if bias.shape != (co,):
            raise ShapeMismatch(f"bias must have shape ({co},), got {bias.shape}")
        out = ShareTensor(
            ring_add(out.data, bias.data[None, None, :], x.params),
            x.params,
            x.owner,
            x.session,
        )
    return out


def upsample_nn(x: ShareTensor, factor: int) -> ShareTensor:
    """Nearest-neighbour spatial upsampling; local, zero communication."""
    if factor < 1:
        raise ShapeMismatch("upsample factor must be >= 1")
    if factor == 1:
        return x
    data = np.repeat(np.repeat(x.data, factor, axis=0), factor, axis=1)
    return ShareTensor(data, x.params, x.owner, x.session)


def conv_mul_op_shape(input_shape, kernel_shape, stride: int) -> tuple[int, int, int]:
    """Matmul triple operation shape consumed by this convolution."""
    w, h, c = input_shape
    kw, kh, ci, co = kernel_shape
    patches = conv_out_dim(w, stride) * conv_out_dim(h, stride)
    return (patches, kw * kh * ci, co)
