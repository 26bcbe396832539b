"""Variational spiking autoencoder.

Encoder: conv(k5)+ReLU -> pool -> conv(k5)+ReLU -> pool -> per-timestep dense
projection to ``n`` currents -> LIF population -> flattened spike vector of
length ``n * T'`` with ``T' = (t // 2) // 2``.

Posterior head: dense map of the spike vector to a mean and a log-variance.

Decoder: dense expansion of ``z`` to ``[C' x T']`` -> two stride-2 transposed
convolutions (ReLU) -> kernel-5 convolution back to the EEG channels ->
zero-pad/crop to ``t`` samples.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import tensor as T
from .inference import LabelPrior, LatentGaussian
from .spiking import LIFParams, lif, lif_soft
from .tensor import Conv1dLayer, DenseLayer, ShapeError, TConv1dLayer, Tensor

LOGVAR_MIN = float(np.log(1e-6))
LOGVAR_MAX = float(np.log(1e6))
NEURON_MODES = ("lif", "tanh", "soft")


@dataclass(frozen=True)
class EncoderConfig:
    in_channels: int
    trial_length: int
    conv_channels: tuple[int, int] = (32, 32)
    lif: LIFParams = field(default_factory=LIFParams)
    latent_dim: int = 16
    decoder_channels: int = 32
    n_classes: int = 2
    neuron: str = "lif"
    soft_k: float = 5.0

    def __post_init__(self):
        if len(self.conv_channels) != 2:
            raise ValueError("exactly two conv blocks (one per pooling stage) are supported")
        if self.trial_length < 4:
            raise ValueError("trial_length must be at least 4 for two pooling stages")
        if self.neuron not in NEURON_MODES:
            raise ValueError(f"neuron must be one of {NEURON_MODES}, got {self.neuron!r}")

    @property
    def steps(self) -> int:
        return (self.trial_length // 2) // 2

    @property
    def spike_dim(self) -> int:
        return self.lif.n * self.steps

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "trial_length": self.trial_length,
            "conv_channels": list(self.conv_channels),
            "n_neurons": self.lif.n,
            "tau": self.lif.tau,
            "v_th": self.lif.v_th,
            "hard_reset": self.lif.hard_reset,
            "latent_dim": self.latent_dim,
            "decoder_channels": self.decoder_channels,
            "n_classes": self.n_classes,
            "neuron": self.neuron,
            "soft_k": self.soft_k,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EncoderConfig":
        lif_params = LIFParams(tau=d["tau"], v_th=d["v_th"], n=d["n_neurons"], hard_reset=d.get("hard_reset", False))
        return cls(
            in_channels=d["in_channels"],
            trial_length=d["trial_length"],
            conv_channels=tuple(d["conv_channels"]),
            lif=lif_params,
            latent_dim=d["latent_dim"],
            decoder_channels=d["decoder_channels"],
            n_classes=d["n_classes"],
            neuron=d.get("neuron", "lif"),
            soft_k=d.get("soft_k", 5.0),
        )


@dataclass
class SpikeVector:
    values: np.ndarray
    subject_id: int = -1
    label: int = -1


class SpikingVAE:
    """Parameters plus forward passes. All methods accept ``[C, t]`` or ``[B, C, t]``."""

    def __init__(self, config: EncoderConfig, seed: int = 0, dtype=np.float64):
        self.config = config
        rng = np.random.default_rng(seed)
        c1, c2 = config.conv_channels
        n, d, cd = config.lif.n, config.latent_dim, config.decoder_channels
        self.conv1 = Conv1dLayer.init(config.in_channels, c1, rng, dtype=dtype, name="enc.conv1")
        self.conv2 = Conv1dLayer.init(c1, c2, rng, dtype=dtype, name="enc.conv2")
        # gain 2 puts initial currents around the firing threshold
        self.current = DenseLayer.init(c2, n, rng, gain=2.0, dtype=dtype, name="enc.current")
        self.head = DenseLayer.init(config.spike_dim, 2 * d, rng, gain=0.1, dtype=dtype, name="post")
        self.dec_fc = DenseLayer.init(d, cd * config.steps, rng, dtype=dtype, name="dec.fc")
        self.tconv1 = TConv1dLayer.init(cd, cd, rng, dtype=dtype, name="dec.tconv1")
        self.tconv2 = TConv1dLayer.init(cd, cd, rng, dtype=dtype, name="dec.tconv2")
        self.out = Conv1dLayer.init(cd, config.in_channels, rng, gain=1.0, dtype=dtype, name="dec.out")
        self.prior = LabelPrior.init(config.n_classes, d, dtype=dtype)

    # parameters --------------------------------------------------------

    def parameters(self) -> "OrderedDict[str, Tensor]":
        out: OrderedDict[str, Tensor] = OrderedDict()
        for name in ("conv1", "conv2", "current", "head", "dec_fc", "tconv1", "tconv2", "out"):
            layer = getattr(self, name)
            out[layer.weight.name] = layer.weight
            out[layer.bias.name] = layer.bias
        out["prior.means"] = self.prior.means
        out["prior.logvars"] = self.prior.logvars
        return out

    def encoder_parameters(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((k, v) for k, v in self.parameters().items() if k.startswith(("enc.", "post.")))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    # forward -----------------------------------------------------------

    def _as_batch(self, x) -> Tensor:
        x = T.as_tensor(x)
        if x.data.ndim == 2:
            x = T.reshape(x, (1,) + x.shape)
        cfg = self.config
        if x.data.ndim != 3 or x.shape[1:] != (cfg.in_channels, cfg.trial_length):
            raise ShapeError(f"expected trials of shape [{cfg.in_channels}, {cfg.trial_length}], got {x.shape}")
        return x

    def currents(self, x) -> Tensor:
        """Input currents ``[B, n, T']`` to the neuron population."""
        h = T.relu(T.conv1d(self._as_batch(x), self.conv1))
        h = T.maxpool1d(h)
        h = T.relu(T.conv1d(h, self.conv2))
        h = T.maxpool1d(h)
        return T.transpose(T.dense(T.transpose(h, (0, 2, 1)), self.current), (0, 2, 1))

    def features(self, x) -> Tensor:
        """Flattened spike (or tanh / soft-spike) features, ``[B, n * T']``."""
        cur = self.currents(x)
        mode = self.config.neuron
        if mode == "lif":
            act = lif(cur, self.config.lif)
        elif mode == "soft":
            act = lif_soft(cur, self.config.lif, self.config.soft_k)
        else:
            act = T.tanh(cur)
        return T.reshape(act, (act.shape[0], -1))

    def posterior(self, features: Tensor) -> LatentGaussian:
        if features.shape[-1] != self.config.spike_dim:
            raise ShapeError(f"feature length {features.shape[-1]} != {self.config.spike_dim}")
        out = T.dense(features, self.head)
        d = self.config.latent_dim
        logvar = T.clip(out[..., d:], LOGVAR_MIN, LOGVAR_MAX)
        return LatentGaussian(out[..., :d], T.exp(logvar))

    def decode(self, z) -> Tensor:
        z = T.as_tensor(z)
        squeeze = z.data.ndim == 1
        if squeeze:
            z = T.reshape(z, (1,) + z.shape)
        if z.shape[-1] != self.config.latent_dim:
            raise ShapeError(f"latent length {z.shape[-1]} != {self.config.latent_dim}")
        cfg = self.config
        h = T.reshape(T.dense(z, self.dec_fc), (z.shape[0], cfg.decoder_channels, cfg.steps))
        h = T.relu(T.tconv1d(h, self.tconv1))
        h = T.relu(T.tconv1d(h, self.tconv2))
        out = T.pad_or_crop(T.conv1d(h, self.out), cfg.trial_length)
        return T.reshape(out, out.shape[1:]) if squeeze else out

    # numpy conveniences ----------------------------------------------------

    def encode(self, x, subject_id: int = -1, label: int = -1) -> SpikeVector:
        """Spike vector for a single trial ``[C, t]``."""
        return SpikeVector(self.features(x).data[0], subject_id, label)

    def encode_batch(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x)
        dtype = self.conv1.weight.dtype
        chunks = [self.features(x[i:i + batch_size].astype(dtype)).data for i in range(0, len(x), batch_size)]
        if not chunks:
            return np.zeros((0, self.config.spike_dim), dtype=dtype)
        return np.concatenate(chunks, axis=0)

    def posterior_means(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        feats = self.encode_batch(x, batch_size)
        return self.posterior(Tensor(feats)).mean.data


def posterior_from_spikes(spk: SpikeVector | np.ndarray, model: SpikingVAE) -> LatentGaussian:
    values = spk.values if isinstance(spk, SpikeVector) else np.asarray(spk)
    q = model.posterior(Tensor(values.astype(model.head.weight.dtype)))
    return LatentGaussian(q.mean.data, q.variance.data)
