import numpy as np
import pytest

from privedge_trainer.ran import LayerDef, RanModel, TrainConfig, Y_ORIG, Y_RECON


def micro_model(seed=1):
    recon = [
        LayerDef("conv", (1, 1, 1, 1), 2, "lrelu"),
        LayerDef("upsample"),
        LayerDef("conv", (1, 1, 1, 1), 1, "none"),
    ]
    disc = [LayerDef("conv", (1, 1, 1, 2), 2, "none")]
    return RanModel(recon, disc, TrainConfig(seed=seed))


def test_recon_loss_zero_when_identical():
    model = micro_model()
    x = np.random.default_rng(0).uniform(0, 1, (4, 2, 2, 1))
    loss, grad = model.recon_loss(x, x.copy())
    assert loss == 0.0
    assert np.all(grad == 0)


def test_recon_loss_hand_case():
    # one 2x2 image: diffs 0.5, -0.5, 0, 0 -> mean over K*d' = 1*4
    x = np.zeros((1, 2, 2, 1))
    xbar = np.array([0.5, -0.5, 0.0, 0.0]).reshape(1, 2, 2, 1)
    model = micro_model()
    loss, grad = model.recon_loss(x, xbar)
    assert loss == pytest.approx((0.25 + 0.25) / 4)
    assert grad[0, 0, 0, 0] == pytest.approx(2 * 0.5 / 4)


def test_label_loss_hand_case():
    model = micro_model()
    scores = np.array([[0.4, 0.2], [1.0, 0.0]])
    loss, _ = model.label_loss(scores, Y_ORIG)
    # ((0.6^2 + 0.2^2) + 0) / 2
    assert loss == pytest.approx((0.36 + 0.04) / 2)


def test_discriminator_perfect_scores_zero_loss():
    model = micro_model()
    # identical batches, discriminator outputs exactly the true labels
    l1, _ = model.label_loss(np.tile(Y_RECON, (3, 1)), Y_RECON)
    l2, _ = model.label_loss(np.tile(Y_ORIG, (3, 1)), Y_ORIG)
    assert (l1 + l2) / 2 == 0.0


def test_discriminator_hand_two_sample_batch():
    model = micro_model()
    s_recon = np.array([[0.0, 1.0], [1.0, 0.0]])  # one right, one fully wrong
    s_orig = np.array([[1.0, 0.0], [1.0, 0.0]])   # both right
    l1, _ = model.label_loss(s_recon, Y_RECON)
    l2, _ = model.label_loss(s_orig, Y_ORIG)
    # wrong sample contributes (1-0)^2 + (0-1)^2 = 2 over K=2
    assert (l1 + l2) / 2 == pytest.approx((2 / 2 + 0) / 2)


def test_gamma_only_reduces_to_autoencoder():
    # beta = 0: the discriminator contributes no gradient to the R step
    recon = [
        LayerDef("conv", (1, 1, 1, 1), 2, "lrelu"),
        LayerDef("upsample"),
        LayerDef("conv", (1, 1, 1, 1), 1, "none"),
    ]
    disc = [LayerDef("conv", (1, 1, 1, 2), 2, "none")]
    a = RanModel(recon, disc, TrainConfig(seed=3, gamma=1.0, beta=0.0))
    b = RanModel(recon, disc, TrainConfig(seed=3, gamma=1.0, beta=0.0))
    batch = np.random.default_rng(1).uniform(0, 1, (4, 2, 2, 1))
    a.reconstructor_step(batch)
    # mutate b's discriminator wildly; with beta=0 the R update is unchanged
    for c in b.D.convs:
        c.kernel += 100.0
    b.reconstructor_step(batch)
    for ca, cb in zip(a.R.convs, b.R.convs):
        assert np.allclose(ca.kernel, cb.kernel)


def test_divergence_guard():
    model = micro_model()
    model.R.convs[0].kernel[:] = np.nan
    with pytest.raises(FloatingPointError):
        model.reconstructor_step(np.zeros((2, 2, 2, 1)))
