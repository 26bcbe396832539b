import numpy as np
import pytest

from isam_mtl import tensor as T
from isam_mtl.model import EncoderConfig, SpikeVector, SpikingVAE, posterior_from_spikes
from isam_mtl.spiking import LIFParams
from isam_mtl.tensor import ShapeError, Tensor


def small_config(**kw):
    base = dict(in_channels=3, trial_length=30, conv_channels=(4, 4), lif=LIFParams(n=5),
                latent_dim=3, decoder_channels=4, n_classes=2)
    base.update(kw)
    return EncoderConfig(**base)


@pytest.mark.parametrize("t, expected", [(750, 16 * 187), (300, 16 * 75)])
def test_spike_vector_length(t, expected):
    cfg = EncoderConfig(in_channels=2, trial_length=t)
    assert cfg.spike_dim == expected


def test_encode_full_length_trial_shape():
    cfg = EncoderConfig(in_channels=2, trial_length=750, conv_channels=(4, 4), decoder_channels=4)
    model = SpikingVAE(cfg)
    spk = model.encode(np.random.default_rng(0).normal(size=(2, 750)))
    assert spk.values.shape == (2992,)
    assert set(np.unique(spk.values)) <= {0.0, 1.0}


def test_zero_input_gives_silent_spike_vector():
    model = SpikingVAE(small_config())
    spk = model.encode(np.zeros((3, 30)))
    assert spk.values.shape == (5 * 7,) and not spk.values.any()


def test_encoder_is_deterministic():
    model = SpikingVAE(small_config(), seed=3)
    x = np.random.default_rng(1).normal(size=(4, 3, 30))
    np.testing.assert_array_equal(model.features(x).data, model.features(x.copy()).data)


def test_encode_shape_mismatch():
    model = SpikingVAE(small_config())
    with pytest.raises(ShapeError):
        model.encode(np.zeros((2, 30)))


@pytest.mark.parametrize("t", [28, 29, 30, 31])
def test_decode_shape_any_length(t):
    model = SpikingVAE(small_config(trial_length=t))
    z = np.random.default_rng(0).normal(size=3)
    assert model.decode(z).shape == (3, t)
    assert model.decode(np.zeros((5, 3))).shape == (5, 3, t)


def test_decode_zero_latent_zero_bias():
    model = SpikingVAE(small_config())
    np.testing.assert_array_equal(model.decode(np.zeros(3)).data, np.zeros((3, 30)))


def test_posterior_zero_head_is_standard_normal():
    model = SpikingVAE(small_config())
    model.head.weight.data[:] = 0.0
    q = posterior_from_spikes(SpikeVector(np.ones(35)), model)
    np.testing.assert_array_equal(q.mean, np.zeros(3))
    np.testing.assert_array_equal(q.variance, np.ones(3))


def test_posterior_variance_clamp():
    model = SpikingVAE(small_config())
    model.head.weight.data[:] = 0.0
    model.head.bias.data[3:] = [20.0, -20.0, 13.0]
    q = posterior_from_spikes(np.zeros(35), model)
    np.testing.assert_allclose(q.variance, [1e6, 1e-6, np.exp(13.0)], rtol=1e-12)


def test_posterior_dim_independent_of_spike_length():
    for t in (20, 40):
        model = SpikingVAE(small_config(trial_length=t))
        assert posterior_from_spikes(np.zeros(model.config.spike_dim), model).mean.shape == (3,)


def test_tanh_ablation_keeps_shapes():
    lif_model = SpikingVAE(small_config())
    tanh_model = SpikingVAE(small_config(neuron="tanh"))
    x = np.random.default_rng(2).normal(size=(2, 3, 30))
    f = tanh_model.features(x).data
    assert f.shape == lif_model.features(x).shape
    assert np.all(np.abs(f) < 1) and not set(np.unique(f)) <= {0.0, 1.0}


def test_state_dict_roundtrip():
    a = SpikingVAE(small_config(), seed=1)
    b = SpikingVAE(small_config(), seed=2)
    b.load_state_dict(a.state_dict())
    x = np.random.default_rng(0).normal(size=(3, 30))
    np.testing.assert_array_equal(a.features(x).data, b.features(x).data)


def test_state_dict_shape_mismatch():
    a = SpikingVAE(small_config())
    state = a.state_dict()
    state["enc.conv1.weight"] = np.zeros((1, 1, 5))
    with pytest.raises(ShapeError):
        a.load_state_dict(state)


def test_features_flow_gradient_to_encoder():
    model = SpikingVAE(small_config(), seed=5)
    x = np.random.default_rng(4).normal(size=(2, 3, 30))
    params = list(model.encoder_parameters().values())
    T.backward(T.sum(model.posterior(model.features(x)).mean), params)
    assert np.abs(model.conv1.weight.grad).sum() > 0
