"""Label-guided variational inference over the latent space.

The prior ``p(z|u)`` is a diagonal Gaussian per class label. With label
guidance on, the approximate posterior ``q(z|x,u)`` is the normalized product
of the encoder Gaussian ``q(z|x)`` and ``p(z|u)``; the loss is the
single-sample negative ELBO ``-log p(x|z) + KL(q(z|x,u) || p(z|u))`` with a
unit-variance Gaussian likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import tensor as T
from .tensor import NumericError, ShapeError, Tensor

if TYPE_CHECKING:
    from .model import SpikingVAE

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
POSTERIOR_MODES = ("product", "encoder-only")


@dataclass
class LatentGaussian:
    """Diagonal Gaussian; ``mean`` and ``variance`` are arrays or Tensors of equal shape."""

    mean: Tensor | np.ndarray
    variance: Tensor | np.ndarray

    def __post_init__(self):
        if np.shape(_data(self.mean)) != np.shape(_data(self.variance)):
            raise ShapeError("mean and variance shapes differ")


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


class LabelPrior:
    def __init__(self, means: Tensor, logvars: Tensor):
        if means.shape != logvars.shape or means.data.ndim != 2:
            raise ShapeError("prior means/log-variances must both be [num_classes, d]")
        self.means = means
        self.logvars = logvars

    @classmethod
    def init(cls, n_classes: int, dim: int, dtype=np.float64) -> "LabelPrior":
        return cls(
            Tensor(np.zeros((n_classes, dim), dtype), True, "prior.means"),
            Tensor(np.zeros((n_classes, dim), dtype), True, "prior.logvars"),
        )

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    def for_labels(self, labels) -> LatentGaussian:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise IndexError(f"label out of range [0, {self.n_classes})")
        return LatentGaussian(self.means[labels], T.exp(self.logvars[labels]))


def prior_for_label(u: int, prior: LabelPrior) -> LatentGaussian:
    if not 0 <= u < prior.n_classes:
        raise IndexError(f"label {u} out of range [0, {prior.n_classes})")
    return LatentGaussian(prior.means.data[u].copy(), np.exp(prior.logvars.data[u]))


def combine_posterior(qx: LatentGaussian, pu: LatentGaussian) -> LatentGaussian:
    """Precision-weighted product of two diagonal Gaussians (renormalized)."""
    if np.shape(_data(qx.mean)) != np.shape(_data(pu.mean)):
        raise ShapeError(f"dimension mismatch {np.shape(_data(qx.mean))} vs {np.shape(_data(pu.mean))}")
    prec1 = T.div(1.0, qx.variance)
    prec2 = T.div(1.0, pu.variance)
    var = T.div(1.0, prec1 + prec2)
    mean = var * (T.mul(qx.mean, prec1) + T.mul(pu.mean, prec2))
    return LatentGaussian(mean, var)


def kl_gaussians(q: LatentGaussian, p: LatentGaussian) -> Tensor:
    """Closed-form KL(q || p), summed over the last axis."""
    if np.shape(_data(q.mean)) != np.shape(_data(p.mean)):
        raise ShapeError("dimension mismatch between q and p")
    if np.any(_data(q.variance) <= 0) or np.any(_data(p.variance) <= 0):
        raise ValueError("variances must be strictly positive")
    qv, pv = T.as_tensor(q.variance), T.as_tensor(p.variance)
    terms = T.log(pv) - T.log(qv) + (qv + T.square(T.sub(q.mean, p.mean))) / pv - 1.0
    return 0.5 * T.sum(terms, axis=-1)


def sample_latent(q: LatentGaussian, rng: np.random.Generator | None = None,
                  eps: np.ndarray | None = None) -> Tensor:
    """Reparameterized draw ``mean + sqrt(variance) * eps`` with ``eps ~ N(0, I)``."""
    shape = np.shape(_data(q.mean))
    if eps is None:
        if rng is None:
            raise ValueError("need a seeded rng or explicit eps")
        eps = rng.standard_normal(shape)
    eps = np.asarray(eps, dtype=_data(q.mean).dtype)
    return T.add(q.mean, T.mul(T.sqrt(q.variance), eps))


def gaussian_log_likelihood(x, mean) -> Tensor:
    """Unit-variance Gaussian log-density summed over all but the batch axis."""
    resid = T.sub(x, mean)
    per_elem = -0.5 * T.square(resid) - HALF_LOG_2PI
    flat = T.reshape(per_elem, (per_elem.shape[0], -1))
    return T.sum(flat, axis=1)


@dataclass
class ElboTerms:
    loss: Tensor  # mean negative ELBO over the batch
    recon: Tensor  # mean -log p(x|z)
    kl: Tensor  # mean KL term


def elbo(model: "SpikingVAE", x, labels, rng: np.random.Generator | None = None,
         label_guidance: bool = True, posterior: str = "product",
         eps: np.ndarray | None = None) -> ElboTerms:
    """Single-sample negative ELBO for a batch ``x`` of shape ``[B, C, t]``."""
    if posterior not in POSTERIOR_MODES:
        raise ValueError(f"posterior must be one of {POSTERIOR_MODES}")
    x = T.as_tensor(x)
    if x.data.ndim == 2:
        x = T.reshape(x, (1,) + x.shape)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    qx = model.posterior(model.features(x))
    if label_guidance:
        prior = model.prior.for_labels(labels)
        q = combine_posterior(qx, prior) if posterior == "product" else qx
    else:
        dim = qx.mean.shape
        prior = LatentGaussian(np.zeros(dim, x.dtype), np.ones(dim, x.dtype))
        q = qx
    z = sample_latent(q, rng=rng, eps=eps)
    recon = T.mean(T.neg(gaussian_log_likelihood(x, model.decode(z))))
    kl = T.mean(kl_gaussians(q, prior))
    for name, term in (("reconstruction", recon), ("kl", kl)):
        if not np.isfinite(term.data):
            raise NumericError(f"non-finite {name} term in the ELBO")
    return ElboTerms(recon + kl, recon, kl)
