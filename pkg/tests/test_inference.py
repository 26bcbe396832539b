import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from isam_mtl import tensor as T
from isam_mtl.inference import (
    LabelPrior, LatentGaussian, combine_posterior, elbo, gaussian_log_likelihood, kl_gaussians,
    prior_for_label, sample_latent,
)
from isam_mtl.model import EncoderConfig, SpikingVAE
from isam_mtl.optim import Adam
from isam_mtl.spiking import LIFParams
from isam_mtl.tensor import NumericError, Tensor


def kl_quadrature(mq, vq, mp, vp):
    """1-D KL(q || p) by numerical integration of q log(q/p)."""
    sq = math.sqrt(vq)

    def integrand(z):
        lq = -0.5 * math.log(2 * math.pi * vq) - (z - mq) ** 2 / (2 * vq)
        lp = -0.5 * math.log(2 * math.pi * vp) - (z - mp) ** 2 / (2 * vp)
        return math.exp(lq) * (lq - lp)

    val, _ = integrate.quad(integrand, mq - 12 * sq, mq + 12 * sq, epsabs=1e-12, epsrel=1e-12, limit=200)
    return val


def gauss(m, v):
    return LatentGaussian(np.atleast_1d(np.asarray(m, float)), np.atleast_1d(np.asarray(v, float)))


# -- prior ------------------------------------------------------------------------

def test_fresh_prior_is_standard_normal():
    prior = LabelPrior.init(4, 3)
    for u in range(4):
        g = prior_for_label(u, prior)
        np.testing.assert_array_equal(g.mean, np.zeros(3))
        np.testing.assert_array_equal(g.variance, np.ones(3))


def test_prior_label_out_of_range():
    prior = LabelPrior.init(4, 3)
    with pytest.raises(IndexError):
        prior_for_label(4, prior)
    with pytest.raises(IndexError):
        prior.for_labels([0, 4])


# -- Gaussian product ---------------------------------------------------------------

def test_product_symmetric():
    g = combine_posterior(gauss(0, 1), gauss(0, 1))
    np.testing.assert_array_equal(g.mean.data, [0.0])
    np.testing.assert_array_equal(g.variance.data, [0.5])


def test_product_closed_form():
    g = combine_posterior(gauss(2, 1), gauss(0, 1))
    assert g.mean.data[0] == pytest.approx(1.0, abs=1e-15)
    assert g.variance.data[0] == pytest.approx(0.5, abs=1e-15)


def test_product_with_uninformative_factor():
    g = combine_posterior(gauss([1.5, -2.0], [0.3, 2.0]), gauss([0.0, 5.0], [1e12, 1e12]))
    np.testing.assert_allclose(g.mean.data, [1.5, -2.0], rtol=1e-10)
    np.testing.assert_allclose(g.variance.data, [0.3, 2.0], rtol=1e-10)


def test_product_dimension_mismatch():
    with pytest.raises(ValueError):
        combine_posterior(gauss([0, 0], [1, 1]), gauss([0], [1]))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.05, 20)), min_size=3, max_size=3))
def test_product_commutative_and_associative(params):
    a, b, c = (gauss(m, v) for m, v in params)
    ab, ba = combine_posterior(a, b), combine_posterior(b, a)
    np.testing.assert_allclose(ab.mean.data, ba.mean.data, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(ab.variance.data, ba.variance.data, rtol=1e-12)
    left = combine_posterior(combine_posterior(a, b), c)
    right = combine_posterior(a, combine_posterior(b, c))
    np.testing.assert_allclose(left.mean.data, right.mean.data, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(left.variance.data, right.variance.data, rtol=1e-12)


# -- KL ------------------------------------------------------------------------------

def test_kl_identical_is_zero():
    assert kl_gaussians(gauss(0, 1), gauss(0, 1)).data == 0.0


def test_kl_unit_shift():
    assert abs(float(kl_gaussians(gauss(1, 1), gauss(0, 1)).data) - 0.5) < 1e-12


def test_kl_rejects_nonpositive_variance():
    with pytest.raises(ValueError):
        kl_gaussians(gauss(0, 0), gauss(0, 1))


def test_kl_nonnegative_and_matches_quadrature():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        mq, mp = rng.normal(0, 2, size=2)
        vq, vp = np.exp(rng.uniform(-2, 2, size=2))
        kl = float(kl_gaussians(gauss(mq, vq), gauss(mp, vp)).data)
        assert kl >= 0
    for _ in range(50):
        mq, mp = rng.normal(0, 2, size=2)
        vq, vp = np.exp(rng.uniform(-2, 2, size=2))
        kl = float(kl_gaussians(gauss(mq, vq), gauss(mp, vp)).data)
        assert abs(kl - kl_quadrature(mq, vq, mp, vp)) < 1e-6


@settings(max_examples=100, deadline=None)
@given(m=st.floats(-3, 3), v=st.floats(0.1, 5), dm=st.floats(-3, 3), dv=st.floats(0.2, 5))
def test_kl_zero_iff_equal(m, v, dm, dv):
    same = float(kl_gaussians(gauss(m, v), gauss(m, v)).data)
    assert same == pytest.approx(0.0, abs=1e-15)
    if abs(dm) > 1e-3 or abs(dv - 1) > 1e-3:
        assert float(kl_gaussians(gauss(m + dm, v * dv), gauss(m, v)).data) > 0


# -- sampling -----------------------------------------------------------------------

def test_zero_variance_sample_is_mean():
    mu = np.array([0.3, -1.0])
    z = sample_latent(gauss(mu, [0.0, 0.0]), np.random.default_rng(0))
    np.testing.assert_array_equal(z.data, mu)


def test_sample_same_seed_same_z():
    q = gauss([0.0, 1.0], [2.0, 0.5])
    a = sample_latent(q, np.random.default_rng(9)).data
    b = sample_latent(q, np.random.default_rng(9)).data
    np.testing.assert_array_equal(a, b)


def test_sample_monte_carlo_mean():
    n = 100_000
    mu, var = np.array([1.5, -0.5]), np.array([2.0, 0.25])
    q = LatentGaussian(np.tile(mu, (n, 1)), np.tile(var, (n, 1)))
    z = sample_latent(q, np.random.default_rng(1)).data
    assert np.all(np.abs(z.mean(axis=0) - mu) < 3 * np.sqrt(var) / np.sqrt(n))


def test_sample_is_differentiable():
    m = Tensor([0.5], requires_grad=True)
    v = Tensor([2.0], requires_grad=True)
    eps = np.array([0.7])
    T.sum(sample_latent(LatentGaussian(m, v), eps=eps)).backward()
    assert m.grad[0] == 1.0
    assert v.grad[0] == pytest.approx(0.5 * 0.7 / math.sqrt(2.0))


# -- ELBO ----------------------------------------------------------------------------

def test_log_density_at_zero_residual():
    x = np.zeros((1, 2, 3))
    ll = gaussian_log_likelihood(x, x).data[0]
    assert ll / 6 == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)
    assert ll / 6 == pytest.approx(-0.9189, abs=1e-4)


def micro_model(neuron="lif", seed=0):
    cfg = EncoderConfig(in_channels=2, trial_length=16, conv_channels=(3, 3), lif=LIFParams(n=3),
                        latent_dim=2, decoder_channels=3, n_classes=2, neuron=neuron, soft_k=4.0)
    return SpikingVAE(cfg, seed=seed)


def jitter_biases(model, rng):
    # zero biases leave ReLU inputs exactly at the kink; nudge them off it and into the firing regime
    for name, p in model.parameters().items():
        if name.endswith(".bias"):
            p.data += rng.normal(0.0, 0.1, size=p.shape)
    model.current.bias.data += 0.5


def test_elbo_perfect_reconstruction_and_matching_prior_is_constant():
    model = micro_model()
    model.head.weight.data[:] = 0.0  # q(z|x) = N(0, I) regardless of x
    model.out.weight.data[:] = 0.0  # decoder output = bias = 0
    x = np.zeros((3, 2, 16))
    terms = elbo(model, x, [0, 1, 0], label_guidance=False, eps=np.zeros((3, 2)))
    assert float(terms.kl.data) == 0.0
    assert float(terms.loss.data) == pytest.approx(32 * 0.5 * math.log(2 * math.pi), abs=1e-12)


def test_elbo_without_guidance_is_plain_vae():
    model = micro_model(seed=3)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 2, 16))
    eps = rng.normal(size=(4, 2))
    terms = elbo(model, x, [0, 1, 1, 0], label_guidance=False, eps=eps)
    q = model.posterior(model.features(x))
    z = q.mean.data + np.sqrt(q.variance.data) * eps
    recon = 0.5 * np.sum((x - model.decode(z).data) ** 2, axis=(1, 2)) + 32 * 0.5 * math.log(2 * math.pi)
    m, v = q.mean.data, q.variance.data
    kl = 0.5 * np.sum(-np.log(v) + v + m ** 2 - 1, axis=1)
    assert float(terms.loss.data) == pytest.approx(np.mean(recon + kl), rel=1e-12)
    # labels do not matter when guidance is off
    other = elbo(model, x, [1, 1, 1, 1], label_guidance=False, eps=eps)
    assert float(other.loss.data) == float(terms.loss.data)


def test_elbo_gradients_reach_every_group():
    model = micro_model(seed=1)
    rng = np.random.default_rng(2)
    jitter_biases(model, rng)
    params = model.parameters()
    terms = elbo(model, rng.normal(size=(4, 2, 16)), [0, 1, 0, 1], rng=rng)
    T.backward(terms.loss, params.values())
    for name in ("enc.conv1.weight", "enc.current.weight", "post.weight", "dec.fc.weight",
                 "dec.tconv1.weight", "dec.out.weight", "prior.means", "prior.logvars"):
        assert np.abs(params[name].grad).sum() > 0, name


def test_elbo_soft_mode_gradient_check():
    model = micro_model(neuron="soft", seed=4)
    rng = np.random.default_rng(3)
    jitter_biases(model, rng)
    model.prior.means.data[:] = rng.normal(size=(2, 2))
    model.prior.logvars.data[:] = rng.normal(0, 0.3, size=(2, 2))
    x = rng.normal(size=(3, 2, 16))
    eps = rng.normal(size=(3, 2))
    labels = [0, 1, 1]
    params = list(model.parameters().values())
    err = T.finite_diff_check(lambda: elbo(model, x, labels, eps=eps).loss, params, 1e-5)
    assert err < 1e-4


def test_elbo_non_finite_names_component():
    model = micro_model()
    x = np.zeros((1, 2, 16))
    x[0, 0, 0] = np.inf
    with pytest.raises(NumericError, match="reconstruction"):
        elbo(model, x, [0], eps=np.zeros((1, 2)))


def test_training_decreases_smoothed_loss():
    model = micro_model(seed=5)
    rng = np.random.default_rng(6)
    t = np.arange(16)
    freqs = np.array([3.0, 6.0])[:, None, None]
    x = np.sin(2 * np.pi * freqs * t / 16 + np.arange(2)[None, :, None])
    labels = np.array([0, 1])
    params = list(model.parameters().values())
    opt = Adam(params, lr=1e-2)
    losses = []
    for step in range(200):
        batch = x + 0.1 * rng.normal(size=x.shape)
        terms = elbo(model, batch, labels, rng=rng)
        opt.zero_grad()
        T.backward(terms.loss, params)
        opt.step()
        losses.append(float(terms.loss.data))
    smooth = np.convolve(losses, np.ones(20) / 20, mode="valid")
    assert smooth[-1] < smooth[0]
