"""Loss semantics: closed-form values, monotonicity, the analytic R1
oracle for linear discriminators, and gradients of every term."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgan.errors import ContractError, DimensionError
from dgan import tensor as T
from dgan.tensor import Tensor, backward, grad_check
from dgan.losses import (
    LossWeights,
    adv_loss_d,
    adv_loss_g,
    ds_loss,
    inversion_encoder_loss,
    inversion_latent_loss,
    latent_opt_loss,
    mse,
    r1_penalty,
    total_loss_g,
)


def softplus(x):
    return math.log1p(math.exp(-abs(x))) + max(x, 0.0)


# -- generator adversarial term ---------------------------------------------


def test_adv_g_at_zero_score():
    assert adv_loss_g(Tensor([[0.0]])).item() == pytest.approx(math.log(2.0), abs=1e-12)


def test_adv_g_vanishes_for_confident_fakes():
    losses = [adv_loss_g(Tensor([[s]])).item() for s in (0.0, 2.0, 10.0, 50.0)]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 1e-20


def test_adv_g_hand_batch():
    out = adv_loss_g(Tensor([[-1.0], [0.0], [1.0]])).item()
    expect = (softplus(1.0) + math.log(2.0) + softplus(-1.0)) / 3.0
    assert out == pytest.approx(expect, rel=1e-12)


@given(st.floats(-20, 20), st.floats(0.01, 5))
@settings(max_examples=50, deadline=None)
def test_adv_g_strictly_decreasing(score, step):
    lo = adv_loss_g(Tensor([[score + step]])).item()
    hi = adv_loss_g(Tensor([[score]])).item()
    assert lo < hi


# -- discriminator term with the gradient penalty ---------------------------


def test_adv_d_constant_discriminator():
    # constant D: zero scores and a zero R1 term
    imgs = Tensor(np.zeros((4, 3, 2, 2)), requires_grad=True)
    score = T.tsum(imgs * 0.0, axis=(1, 2, 3), keepdims=False).reshape(4, 1)
    loss = adv_loss_d(score, Tensor(np.zeros((4, 1))), imgs, gamma=10.0)
    assert loss.item() == pytest.approx(2.0 * math.log(2.0), rel=1e-12)


def test_r1_linear_discriminator_analytic():
    # D(x) = <w, x>: per-sample gradient is w, so the penalty is (g/2)||w||^2
    rng = np.random.default_rng(0)
    w = rng.standard_normal(12)
    imgs = Tensor(rng.standard_normal((5, 12)), requires_grad=True)
    score = T.matmul(imgs, Tensor(w.reshape(12, 1)))
    gamma = 7.0
    pen = r1_penalty(score, imgs, gamma)
    assert pen.item() == pytest.approx(gamma / 2.0 * np.sum(w**2), rel=1e-12)


def test_adv_d_gamma_scaling_only_affects_penalty():
    rng = np.random.default_rng(1)
    w = Tensor(rng.standard_normal((4, 1)))

    def loss_at(gamma):
        imgs = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        real = T.matmul(imgs, w)
        fake = Tensor(rng.standard_normal((3, 1)))
        return adv_loss_d(real, fake, imgs, gamma).item(), imgs, fake

    # same data both times via a fixed generator state
    rng = np.random.default_rng(1)
    l1, imgs, fake = loss_at(2.0)
    rng = np.random.default_rng(1)
    l2, _, _ = loss_at(4.0)
    pen = float(np.sum(w.numpy() ** 2))
    assert l2 - l1 == pytest.approx(pen, rel=1e-9)


def test_adv_d_rejects_negative_gamma():
    imgs = Tensor(np.zeros((1, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        adv_loss_d(Tensor([[0.0]]), Tensor([[0.0]]), imgs, gamma=-1.0)


def test_r1_requires_grad_enabled_images():
    imgs = Tensor(np.zeros((1, 2)))
    with pytest.raises(ContractError):
        r1_penalty(Tensor([[0.0]]), imgs, 1.0)


def test_r1_gradient_matches_nested_finite_differences():
    # d/dtheta of the penalty for D(x) = sigmoid(<w, x>) summed
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((2, 3))
    w0 = rng.standard_normal(3)

    def penalty_value(wv):
        imgs = Tensor(x0, requires_grad=True)
        score = T.sigmoid(T.matmul(imgs, Tensor(wv.reshape(3, 1), requires_grad=True)))
        return r1_penalty(score, imgs, gamma=2.0)

    w = Tensor(w0, requires_grad=True)
    imgs = Tensor(x0, requires_grad=True)
    score = T.sigmoid(T.matmul(imgs, T.reshape(w, (3, 1))))
    pen = r1_penalty(score, imgs, gamma=2.0)
    analytic = backward(pen)[w].numpy()

    h = 1e-6
    numeric = np.zeros(3)
    for i in range(3):
        wp, wm = w0.copy(), w0.copy()
        wp[i] += h
        wm[i] -= h
        numeric[i] = (penalty_value(wp).item() - penalty_value(wm).item()) / (2 * h)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-9)


# -- diversity term ---------------------------------------------------------


def test_ds_identical_images_pay_full_threshold():
    rng = np.random.default_rng(3)
    img = Tensor(rng.standard_normal((2, 3, 4, 4)))
    assert ds_loss(img, img, 0.3).item() == pytest.approx(0.3, rel=1e-12)


def test_ds_far_images_pay_nothing():
    a = Tensor(np.zeros((1, 3, 4, 4)))
    b = Tensor(np.full((1, 3, 4, 4), 0.5))
    assert ds_loss(a, b, 0.3).item() == 0.0


def test_ds_threshold_boundary():
    a = Tensor(np.zeros((1, 1, 2, 2)))
    b = Tensor(np.full((1, 1, 2, 2), 0.2))
    assert ds_loss(a, b, 0.3).item() == pytest.approx(0.1, rel=1e-12)


def test_ds_hinges_per_pair_before_averaging():
    # pair 0 saturated (dist 1.0 > lam), pair 1 identical: hinge-then-average
    # gives lam/2, average-then-hinge would give 0
    a = Tensor(np.stack([np.zeros((1, 2, 2)), np.zeros((1, 2, 2))]))
    b = Tensor(np.stack([np.ones((1, 2, 2)), np.zeros((1, 2, 2))]))
    assert ds_loss(a, b, 0.3).item() == pytest.approx(0.15, rel=1e-12)


def test_ds_resolution_independent():
    for r in (4, 8, 16):
        a = Tensor(np.zeros((1, 3, r, r)))
        b = Tensor(np.full((1, 3, r, r), 0.1))
        assert ds_loss(a, b, 0.3).item() == pytest.approx(0.2, rel=1e-12)


def test_ds_shape_mismatch():
    with pytest.raises(DimensionError):
        ds_loss(Tensor(np.zeros((1, 2, 2, 2))), Tensor(np.zeros((1, 2, 2, 3))), 0.3)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_ds_range_property(seed):
    rng = np.random.default_rng(seed)
    lam = float(rng.uniform(0.05, 1.0))
    a = Tensor(rng.standard_normal((3, 2, 4, 4)))
    b = Tensor(rng.standard_normal((3, 2, 4, 4)))
    val = ds_loss(a, b, lam).item()
    assert 0.0 <= val <= lam + 1e-15


def test_total_loss_g_adds():
    assert total_loss_g(Tensor(0.7), Tensor(0.3)).item() == pytest.approx(1.0)
    assert total_loss_g(Tensor(0.0), Tensor(0.4)).item() == pytest.approx(0.4)


# -- inversion losses -------------------------------------------------------


def test_latent_loss_perfect_encoding():
    s = Tensor(np.ones(6))
    c = Tensor(np.full(4, 2.0))
    assert inversion_latent_loss(s, s, c, c).item() == pytest.approx(0.0, abs=1e-9)


def test_latent_loss_three_four_five():
    s = Tensor([3.0, 4.0])
    assert inversion_latent_loss(s, Tensor([0.0, 0.0]), Tensor([1.0]), Tensor([1.0])).item() == pytest.approx(5.0, rel=1e-12)


def test_latent_loss_symmetric():
    rng = np.random.default_rng(4)
    s, sf = Tensor(rng.standard_normal(5)), Tensor(rng.standard_normal(5))
    c, cf = Tensor(rng.standard_normal(3)), Tensor(rng.standard_normal(3))
    a = inversion_latent_loss(s, sf, c, cf).item()
    b = inversion_latent_loss(sf, s, cf, c).item()
    assert a == pytest.approx(b, rel=1e-12)


def test_latent_loss_squared_switch():
    s = Tensor([3.0, 4.0])
    z2 = Tensor([0.0, 0.0])
    z1 = Tensor([0.0])
    out = inversion_latent_loss(s, z2, z1, z1, squared=True).item()
    assert out == pytest.approx(25.0, rel=1e-12)


def test_encoder_loss_all_terms_vanish():
    x = Tensor(np.zeros((1, 3, 4, 4)))
    latent = Tensor(0.0)
    big_score = Tensor([[60.0]])
    w = LossWeights()
    val = inversion_encoder_loss(x, x, latent, big_score, w).item()
    assert val == pytest.approx(0.0, abs=1e-12)


def test_encoder_loss_default_weights():
    w = LossWeights()
    assert w.lambda_lat == 1.0 and w.lambda_adv == 0.1 and w.lambda_reg == 2.0
    assert w.lambda_ds == 0.3


def test_encoder_loss_weights_applied():
    x = Tensor(np.zeros((1, 2)))
    rec = Tensor(np.zeros((1, 2)))
    w = LossWeights(lambda_lat=2.0, lambda_adv=0.5)
    val = inversion_encoder_loss(x, rec, Tensor(3.0), Tensor([[0.0]]), w).item()
    assert val == pytest.approx(2.0 * 3.0 + 0.5 * math.log(2.0), rel=1e-12)


def test_loss_weights_reject_negative():
    with pytest.raises(ContractError):
        LossWeights(lambda_ds=-0.1)


def test_latent_opt_loss_fixed_point():
    # generator = identity layout, encoders recover the codes exactly
    def synthesize(s, c):
        return T.reshape(s, (1, 4)) + 0.0 * T.reshape(c, (1, 4))

    def encode_style(img):
        return T.reshape(img, (4,))

    def encode_content(img):
        return Tensor(np.zeros(4))

    s = Tensor(np.array([1.0, 2.0, 3.0, 4.0]), requires_grad=True)
    c = Tensor(np.zeros(4), requires_grad=True)
    x_real = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]]))
    val = latent_opt_loss(s, c, x_real, synthesize, encode_style, encode_content, 2.0)
    assert val.item() == pytest.approx(0.0, abs=1e-9)


def test_latent_opt_loss_gradient():
    rng = np.random.default_rng(5)
    m = Tensor(rng.standard_normal((4, 3)))
    enc_s = Tensor(rng.standard_normal((3, 4)))
    enc_c = Tensor(rng.standard_normal((3, 4)))
    x_real = Tensor(rng.standard_normal((1, 4)))
    c_fix = Tensor(rng.standard_normal(3))

    def synthesize(s, c):
        return T.transpose(T.matmul(m, T.reshape(s, (3, 1)) + T.reshape(c, (3, 1))))

    def encode_style(img):
        return T.reshape(T.matmul(enc_s, T.transpose(img)), (3,))

    def encode_content(img):
        return T.reshape(T.matmul(enc_c, T.transpose(img)), (3,))

    def f(s):
        return latent_opt_loss(s, c_fix, x_real, synthesize, encode_style, encode_content, 2.0)

    assert grad_check(f, Tensor(rng.standard_normal(3)), h=1e-6) < 1e-4


# -- gradients of every loss term -------------------------------------------


@pytest.mark.parametrize("seed", range(20))
def test_adv_losses_gradients(seed):
    rng = np.random.default_rng(seed)
    w = Tensor(rng.standard_normal((6, 1)))
    fake = Tensor(rng.standard_normal((3, 1)))

    def f_d(imgs):
        score = T.sigmoid(T.matmul(imgs, w))
        return adv_loss_d(score, fake, imgs, gamma=0.0)

    assert grad_check(f_d, Tensor(rng.standard_normal((3, 6))), h=1e-5) < 1e-5
    assert grad_check(lambda s: adv_loss_g(s), Tensor(rng.standard_normal((4, 1))), h=1e-5) < 1e-5


@pytest.mark.parametrize("seed", range(20))
def test_r1_wrt_discriminator_weights_gradient(seed):
    # the full second-order path: d penalty / d w via graph-node gradients
    rng = np.random.default_rng(100 + seed)
    x0 = rng.standard_normal((2, 4))

    def f(w):
        imgs = Tensor(x0, requires_grad=True)
        score = T.softplus(T.matmul(imgs, T.reshape(w, (4, 1))))
        return r1_penalty(score, imgs, gamma=3.0)

    assert grad_check(f, Tensor(rng.standard_normal(4)), h=1e-5) < 1e-5


@pytest.mark.parametrize("seed", range(20))
def test_ds_gradient(seed):
    rng = np.random.default_rng(200 + seed)
    b = Tensor(rng.standard_normal((2, 3, 3)))
    # keep distances away from the hinge kink
    assert grad_check(lambda a: ds_loss(a, b, 0.3), Tensor(rng.standard_normal((2, 3, 3))), h=1e-6) < 1e-5


@pytest.mark.parametrize("seed", range(20))
def test_latent_loss_gradient(seed):
    rng = np.random.default_rng(300 + seed)
    sf = Tensor(rng.standard_normal(5))
    c = Tensor(rng.standard_normal(4))
    cf = Tensor(rng.standard_normal(4))
    assert grad_check(lambda s: inversion_latent_loss(s, sf, c, cf), Tensor(rng.standard_normal(5)), h=1e-6) < 1e-5


def test_mse_basics():
    a = Tensor([[1.0, 2.0]])
    b = Tensor([[3.0, 2.0]])
    assert mse(a, b).item() == pytest.approx(2.0)
    with pytest.raises(DimensionError):
        mse(a, Tensor([[1.0]]))
