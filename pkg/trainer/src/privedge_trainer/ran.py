"""One-class reconstructive adversarial network.

A reconstructor (under-complete strided autoencoder) learns one user's
image class by minimizing a weighted sum of the reconstruction loss

    L_r = 1/(K d') sum_j sum_l (x_j(l) - xbar_j(l))^2,   d' = w*h*c

and the adversary loss

    L_a = 1/K sum_j || D(xbar_j) - y_fake ||^2

against a convolutional discriminator trained in alternation on

    L_d = 1/(2K) sum_j ( || D(xbar_j) - y_recon ||^2
                         + || D(x_j) - y_orig ||^2 ).

Labels are one-hot over two classes: y_orig = (1, 0) marks original
images, y_recon = (0, 1) reconstructions; the fake label the
reconstructor optimizes toward is y_orig. Both networks take one Adam
step per iteration on a fresh random mini-batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Adam, Conv, LeakyRelu, SpatialMean, UpsampleNN

Y_ORIG = np.array([1.0, 0.0])
Y_RECON = np.array([0.0, 1.0])
Y_FAKE = Y_ORIG  # what the reconstructor wants the discriminator to say


@dataclass
class LayerDef:
    kind: str                  # "conv" | "upsample"
    kernel: tuple = ()
    stride: int = 1
    activation: str = "none"
    alpha_shift: int = 2
    factor: int = 2


def default_reconstructor(channels=(2,), kernel=4) -> list[LayerDef]:
    """Compact under-complete autoencoder on 16x16x1 inputs."""
    defs = []
    c_prev = 1
    for c in channels:
        defs.append(LayerDef("conv", (kernel, kernel, c_prev, c), 2, "lrelu"))
        c_prev = c
    for c in reversed((1,) + tuple(channels[:-1])):
        defs.append(LayerDef("upsample"))
        act = "none" if c == 1 else "lrelu"
        defs.append(LayerDef("conv", (3, 3, c_prev, c), 1, act))
        c_prev = c
    return defs


def default_discriminator() -> list[LayerDef]:
    return [
        LayerDef("conv", (4, 4, 1, 8), 2, "lrelu"),
        LayerDef("conv", (4, 4, 8, 16), 2, "lrelu"),
        LayerDef("conv", (4, 4, 16, 2), 2, "none"),
    ]


class Stack:
    """Sequential layer stack with explicit forward/backward."""

    def __init__(self, defs: list[LayerDef], rng: np.random.Generator, head=None):
        self.defs = defs
        self.layers = []
        self.convs: list[Conv] = []
        for d in defs:
            if d.kind == "conv":
                fan_in = int(np.prod(d.kernel[:3]))
                kern = rng.normal(0.0, 1.0 / np.sqrt(fan_in), d.kernel)
                conv = Conv(kern, d.stride)
                self.layers.append(conv)
                self.convs.append(conv)
                if d.activation == "lrelu":
                    self.layers.append(LeakyRelu(d.alpha_shift))
            else:
                self.layers.append(UpsampleNN(d.factor))
        self.head = head
        if head is not None:
            self.layers.append(head)

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def zero_grad(self):
        for c in self.convs:
            c.grad = np.zeros_like(c.kernel)


@dataclass
class TrainConfig:
    lr: float = 2e-4
    gamma: float = 0.999       # reconstruction loss weight
    beta: float = 0.001        # adversary loss weight
    batch: int = 32
    max_iters: int = 3000
    plateau_rel: float = 1e-4
    plateau_window: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    seed: int = 0


class RanModel:
    def __init__(self, recon_defs=None, disc_defs=None, config: TrainConfig | None = None):
        self.config = config or TrainConfig()
        rng = np.random.default_rng(self.config.seed)
        self.recon_defs = recon_defs or default_reconstructor()
        self.R = Stack(self.recon_defs, rng)
        self.D = Stack(disc_defs or default_discriminator(), rng, head=SpatialMean())
        self.opt_r = Adam(
            self.R.convs, self.config.lr, self.config.adam_beta1, self.config.adam_beta2
        )
        self.opt_d = Adam(
            self.D.convs, self.config.lr, self.config.adam_beta1, self.config.adam_beta2
        )

    # -- losses --------------------------------------------------------------

    @staticmethod
    def recon_loss(x: np.ndarray, xbar: np.ndarray):
        k = x.shape[0]
        d_elems = int(np.prod(x.shape[1:]))
        diff = xbar - x
        loss = float((diff**2).sum() / (k * d_elems))
        grad = 2.0 * diff / (k * d_elems)
        return loss, grad

    @staticmethod
    def label_loss(scores: np.ndarray, target: np.ndarray):
        k = scores.shape[0]
        diff = scores - target[None, :]
        loss = float((diff**2).sum() / k)
        grad = 2.0 * diff / k
        return loss, grad

    # -- alternating steps ----------------------------------------------------

    def reconstructor_step(self, batch: np.ndarray) -> dict:
        """One Adam step on gamma*L_r + beta*L_a with D frozen."""
        cfg = self.config
        self.R.zero_grad()
        self.D.zero_grad()
        xbar = self.R.forward(batch)
        l_r, d_xbar_r = self.recon_loss(batch, xbar)
        scores = self.D.forward(xbar)
        l_a, d_scores = self.label_loss(scores, Y_FAKE)
        d_xbar_a = self.D.backward(d_scores)  # gradient through frozen D
        self.R.backward(cfg.gamma * d_xbar_r + cfg.beta * d_xbar_a)
        if not np.isfinite(l_r) or not np.isfinite(l_a):
            raise FloatingPointError(f"reconstructor diverged: L_r={l_r}, L_a={l_a}")
        self.opt_r.step()
        return {"l_r": l_r, "l_a": l_a}

    def discriminator_step(self, batch: np.ndarray) -> dict:
        """One Adam step on the discriminator's split loss with R frozen."""
        self.D.zero_grad()
        xbar = self.R.forward(batch)
        # reconstructed half
        s_recon = self.D.forward(xbar)
        l1, g1 = self.label_loss(s_recon, Y_RECON)
        self.D.backward(g1 / 2.0)
        grads_recon = [c.grad.copy() for c in self.D.convs]
        # original half
        self.D.zero_grad()
        s_orig = self.D.forward(batch)
        l2, g2 = self.label_loss(s_orig, Y_ORIG)
        self.D.backward(g2 / 2.0)
        for c, g in zip(self.D.convs, grads_recon):
            c.grad += g
        loss = (l1 + l2) / 2.0
        if not np.isfinite(loss):
            raise FloatingPointError(f"discriminator diverged: {loss}")
        self.opt_d.step()
        return {"l_d": loss}

    def discriminator_loss(self, batch: np.ndarray) -> float:
        xbar = self.R.forward(batch)
        l1, _ = self.label_loss(self.D.forward(xbar), Y_RECON)
        l2, _ = self.label_loss(self.D.forward(batch), Y_ORIG)
        return (l1 + l2) / 2.0

    # -- full loop -------------------------------------------------------------

    def train(self, images: np.ndarray, log_every: int = 0) -> dict:
        """Alternate discriminator and reconstructor steps to a plateau.

        Convergence: the windowed mean of L_r changes by less than
        plateau_rel over plateau_window iterations, or max_iters.
        """
        cfg = self.config
        rng = np.random.default_rng(cfg.seed + 1)
        history = []
        window = []
        prev_mean = None
        for it in range(cfg.max_iters):
            idx = rng.integers(0, len(images), size=min(cfg.batch, len(images)))
            batch = images[idx]
            self.discriminator_step(batch)
            stats = self.reconstructor_step(batch)
            history.append(stats["l_r"])
            window.append(stats["l_r"])
            if log_every and it % log_every == 0:
                print(f"iter {it}: L_r={stats['l_r']:.6f} L_a={stats['l_a']:.6f}")
            if len(window) >= cfg.plateau_window:
                mean = float(np.mean(window))
                window.clear()
                if prev_mean is not None and abs(prev_mean - mean) < cfg.plateau_rel * max(
                    prev_mean, 1e-12
                ):
                    break
                prev_mean = mean
        return {"iterations": it + 1, "l_r_history": history}

    def reconstruct(self, images: np.ndarray) -> np.ndarray:
        return self.R.forward(images)

    def dissimilarities(self, images: np.ndarray) -> np.ndarray:
        """Summed squared error per image, the engine's matching score."""
        xbar = self.R.forward(images)
        return ((images - xbar) ** 2).sum(axis=(1, 2, 3))
