"""Leaky integrate-and-fire population with a rectangular surrogate gradient.

Dynamics, per neuron, with ``I`` the projected input current::

    v[t] = (1 - tau) * v[t-1] - s[t-1] * v_th + I[t-1]
    s[t] = step(v[t] - v_th)

starting from ``v[0] = s[0] = 0``. Time runs along the last axis; column ``j``
of an output matrix holds step ``t = j + 1``. Any leading axes (batch,
neurons) are simulated in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import NumericError, Tensor, _make, as_tensor


@dataclass(frozen=True)
class LIFParams:
    tau: float = 0.5
    v_th: float = 1.0
    n: int = 16
    hard_reset: bool = False

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must lie in (0, 1), got {self.tau}")
        if self.v_th <= 0:
            raise ValueError(f"v_th must be positive, got {self.v_th}")
        if self.n < 1:
            raise ValueError(f"population size must be positive, got {self.n}")


@dataclass
class SpikeTrain:
    spikes: np.ndarray
    potentials: np.ndarray


def rect(x: np.ndarray) -> np.ndarray:
    """Surrogate derivative of the step: 1 on the closed interval |x| <= 0.5."""
    return (np.abs(x) <= 0.5).astype(np.asarray(x).dtype)


def _check_currents(currents) -> np.ndarray:
    currents = np.asarray(currents)
    if not np.issubdtype(currents.dtype, np.floating):
        currents = currents.astype(np.float64)
    if currents.ndim < 1 or currents.shape[-1] < 1:
        raise ValueError("currents need at least one time step")
    if not np.all(np.isfinite(currents)):
        raise NumericError("non-finite input current")
    return currents


def _simulate(currents: np.ndarray, params: LIFParams, k: float | None):
    leak = 1.0 - params.tau
    v = np.zeros(currents.shape[:-1], dtype=currents.dtype)
    s = np.zeros_like(v)
    pots = np.empty_like(currents)
    spikes = np.empty_like(currents)
    for j in range(currents.shape[-1]):
        if params.hard_reset:
            v = leak * v * (1.0 - s) + currents[..., j]
        else:
            v = leak * v - s * params.v_th + currents[..., j]
        if k is None:
            s = (v >= params.v_th).astype(currents.dtype)
        else:
            s = 0.5 * (1.0 + np.tanh(0.5 * k * (v - params.v_th)))
        pots[..., j] = v
        spikes[..., j] = s
    return spikes, pots


def lif_simulate(currents, params: LIFParams) -> SpikeTrain:
    currents = _check_currents(currents)
    spikes, pots = _simulate(currents, params, None)
    return SpikeTrain(spikes, pots)


def lif_soft_forward(currents, params: LIFParams, k: float) -> np.ndarray:
    """Logistic relaxation of the spike step; the reset also uses the soft value."""
    if k <= 0:
        raise ValueError("steepness k must be positive")
    currents = _check_currents(currents)
    return _simulate(currents, params, k)[0]


def _bptt(grad_spikes, dsdv, spikes, potentials, params: LIFParams) -> np.ndarray:
    leak = 1.0 - params.tau
    grad_i = np.empty_like(grad_spikes)
    gv_next = np.zeros(grad_spikes.shape[:-1], dtype=grad_spikes.dtype)
    for j in range(grad_spikes.shape[-1] - 1, -1, -1):
        if params.hard_reset:
            gs = grad_spikes[..., j] + gv_next * (-leak * potentials[..., j])
            gv = gs * dsdv[..., j] + gv_next * (leak * (1.0 - spikes[..., j]))
        else:
            gs = grad_spikes[..., j] + (-params.v_th) * gv_next
            gv = gs * dsdv[..., j] + leak * gv_next
        grad_i[..., j] = gv
        gv_next = gv
    return grad_i


def lif_backward(grad_spikes, train: SpikeTrain | None, params: LIFParams) -> np.ndarray:
    """Backprop-through-time with ``ds/dv := rect(v - v_th)``; returns dL/dI."""
    if train is None or train.potentials is None:
        raise RuntimeError("lif_backward needs the potentials saved by the forward pass")
    grad_spikes = np.asarray(grad_spikes, dtype=train.potentials.dtype)
    if grad_spikes.shape != train.potentials.shape:
        raise ValueError(f"gradient shape {grad_spikes.shape} != saved shape {train.potentials.shape}")
    dsdv = rect(train.potentials - params.v_th)
    return _bptt(grad_spikes, dsdv, train.spikes, train.potentials, params)


def lif(currents: Tensor, params: LIFParams) -> Tensor:
    """Differentiable hard-spiking LIF op (surrogate backward)."""
    currents = as_tensor(currents)
    train = lif_simulate(currents.data, params)
    return _make(train.spikes, (currents,), lambda g: (lif_backward(g, train, params),))


def lif_soft(currents: Tensor, params: LIFParams, k: float) -> Tensor:
    """Soft LIF op with its exact derivative, for gradient verification."""
    currents = as_tensor(currents)
    if k <= 0:
        raise ValueError("steepness k must be positive")
    data = _check_currents(currents.data)
    spikes, pots = _simulate(data, params, k)

    def fn(g):
        return (_bptt(g, k * spikes * (1.0 - spikes), spikes, pots, params),)

    return _make(spikes, (currents,), fn)


def bipolarize(spikes) -> np.ndarray:
    """Flatten row-major and map {0, 1} -> {-1, +1} as int8."""
    spikes = np.asarray(spikes)
    if not np.all((spikes == 0) | (spikes == 1)):
        raise ValueError("bipolarize expects a binary {0, 1} array")
    return (2 * spikes.reshape(-1).astype(np.int8) - 1).astype(np.int8)
