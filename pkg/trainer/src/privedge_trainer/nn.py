"""Minimal numpy layers with hand-written backward passes.

Conventions match the prediction engine: tensors are [w, h, c], kernels
[kw, kh, c_in, c_out], convolutions use SAME zero padding with output
extent ceil(in/stride), upsampling is nearest neighbour, and leaky ReLU
uses slope alpha = 2^-alpha_shift so the float model and the fixed-point
engine agree on the activation exactly.
"""

from __future__ import annotations

import numpy as np


def conv_out_dim(size: int, stride: int) -> int:
    return -(-size // stride)


def same_padding(size: int, ksize: int, stride: int) -> tuple[int, int]:
    out = conv_out_dim(size, stride)
    total = max((out - 1) * stride + ksize - size, 0)
    lo = total // 2
    return lo, total - lo


def im2col(x: np.ndarray, kw: int, kh: int, stride: int):
    """[n, w, h, c] -> patch matrix [n, out_w*out_h, kw*kh*c]."""
    n, w, h, c = x.shape
    pw_lo, pw_hi = same_padding(w, kw, stride)
    ph_lo, ph_hi = same_padding(h, kh, stride)
    padded = np.pad(x, ((0, 0), (pw_lo, pw_hi), (ph_lo, ph_hi), (0, 0)))
    out_w, out_h = conv_out_dim(w, stride), conv_out_dim(h, stride)
    cols = np.empty((n, out_w * out_h, kw * kh * c), dtype=x.dtype)
    col = 0
    for dx in range(kw):
        for dy in range(kh):
            block = padded[
                :,
                dx : dx + (out_w - 1) * stride + 1 : stride,
                dy : dy + (out_h - 1) * stride + 1 : stride,
                :,
            ]
            cols[:, :, col : col + c] = block.reshape(n, -1, c)
            col += c
    return cols, out_w, out_h


def col2im(dcols: np.ndarray, x_shape, kw: int, kh: int, stride: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add patch gradients back onto the input."""
    n, w, h, c = x_shape
    pw_lo, pw_hi = same_padding(w, kw, stride)
    ph_lo, ph_hi = same_padding(h, kh, stride)
    out_w, out_h = conv_out_dim(w, stride), conv_out_dim(h, stride)
    padded = np.zeros((n, w + pw_lo + pw_hi, h + ph_lo + ph_hi, c))
    col = 0
    for dx in range(kw):
        for dy in range(kh):
            block = dcols[:, :, col : col + c].reshape(n, out_w, out_h, c)
            padded[
                :,
                dx : dx + (out_w - 1) * stride + 1 : stride,
                dy : dy + (out_h - 1) * stride + 1 : stride,
                :,
            ] += block
            col += c
    return padded[:, pw_lo : pw_lo + w, ph_lo : ph_lo + h, :]


class Conv:
    """SAME strided convolution over a batch."""

    def __init__(self, kernel: np.ndarray, stride: int = 1):
        self.kernel = np.asarray(kernel, dtype=np.float64)
        self.stride = stride
        self.grad = np.zeros_like(self.kernel)
        self._cache = None

    @property
    def params(self):
        return self.kernel

    def forward(self, x: np.ndarray) -> np.ndarray:
        kw, kh, ci, co = self.kernel.shape
        cols, out_w, out_h = im2col(x, kw, kh, self.stride)
        out = cols @ self.kernel.reshape(-1, co)
        self._cache = (x.shape, cols)
        return out.reshape(x.shape[0], out_w, out_h, co)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        kw, kh, ci, co = self.kernel.shape
        x_shape, cols = self._cache
        dflat = dout.reshape(dout.shape[0], -1, co)
        self.grad = np.einsum("npk,npc->kc", cols, dflat).reshape(self.kernel.shape)
        dcols = dflat @ self.kernel.reshape(-1, co).T
        return col2im(dcols, x_shape, kw, kh, self.stride)


class LeakyRelu:
    def __init__(self, alpha_shift: int = 2):
        self.alpha = 2.0 ** -alpha_shift
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, self.alpha * x)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dout, self.alpha * dout)


class UpsampleNN:
    def __init__(self, factor: int = 2):
        self.factor = factor

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.repeat(np.repeat(x, self.factor, axis=1), self.factor, axis=2)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        f = self.factor
        n, w, h, c = dout.shape
        return dout.reshape(n, w // f, f, h // f, f, c).sum(axis=(2, 4))


class SpatialMean:
    """Average the spatial grid away: [n, w, h, c] -> [n, c]."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        n, w, h, c = self._shape
        return np.broadcast_to(dout[:, None, None, :], self._shape) / (w * h)


class Adam:
    """Mini-batch Adam over a list of parameter-holding Conv layers."""

    def __init__(self, convs: list, lr: float = 2e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.convs = convs
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(c.kernel) for c in convs]
        self.v = [np.zeros_like(c.kernel) for c in convs]

    def step(self):
        self.t += 1
        b1c = 1 - self.beta1**self.t
        b2c = 1 - self.beta2**self.t
        for i, conv in enumerate(self.convs):
            g = conv.grad
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            mhat = self.m[i] / b1c
            vhat = self.v[i] / b2c
            conv.kernel -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
