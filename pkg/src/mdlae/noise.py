"""Gaussian feature noise: the denoising codelength bound, its Monte Carlo
gradient, and the second-order (Taylor) version of the bound."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import netgraph as ng
from .codelength import Decoder, affine_expected_rec, expected_reconstruction_error, reconstruction_error
from .hessian import HessianResult, feature_hessian, optimal_noise
from .outvar import LOG_2PI
from .priors import GaussianFull, GaussianPrior, Prior, log_density

NOISE_KINDS = ("fixed", "optimal_diag", "optimal_full")


def as_cov(cov, d: int) -> np.ndarray:
    """Scalar -> scalar * Id, vector -> diagonal matrix, matrix unchanged."""
    c = np.asarray(cov, dtype=float)
    if c.ndim == 0:
        return float(c) * np.eye(d)
    if c.ndim == 1:
        if len(c) != d:
            raise ValueError(f"noise variance vector has length {len(c)}, expected {d}")
        return np.diag(c)
    if c.shape != (d, d):
        raise ValueError(f"noise covariance has shape {c.shape}, expected ({d}, {d})")
    return c


def _chol(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("noise covariance is not positive definite") from None


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "fixed"
    cov: object = 1.0
    hessian: str = "gn_diag"

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")

    def resolve(self, prior: GaussianPrior, dec: Decoder, f_mean, x) -> np.ndarray:
        """The covariance to use for one sample; optimal kinds depend on the sample."""
        d = len(f_mean)
        if self.kind == "fixed":
            cov = as_cov(self.cov, d)
            _chol(cov)
            return cov
        H = feature_hessian(self.hessian, prior, dec, f_mean, x)
        mode = "diagonal" if self.kind == "optimal_diag" else "full"
        return optimal_noise(H, mode).cov


def neg_expected_log_prior(prior: Prior, f_mean, cov, ys=None) -> float:
    """-E_{y ~ N(f_mean, cov)} log rho(y); exact for Gaussian priors, else averaged over ``ys``."""
    if isinstance(prior, GaussianPrior):
        lam = prior.var
        return float(0.5 * np.sum((f_mean ** 2 + np.diag(cov)) / lam + np.log(lam) + LOG_2PI))
    if ys is None:
        raise ValueError("non-Gaussian priors need Monte Carlo samples")
    return float(-np.mean(log_density(prior, ys)))


def _entropy_terms(cov: np.ndarray) -> float:
    """-1/2 log det Sigma - d/2 (1 + log 2 pi)."""
    L = _chol(cov)
    return float(-np.sum(np.log(np.diag(L))) - 0.5 * len(cov) * (1 + LOG_2PI))


def denoising_bound(
    prior: Prior,
    dec: Decoder,
    f_mean,
    cov,
    x,
    mc_samples: int | None = 16,
    rng: np.random.Generator | None = None,
) -> float:
    """Codelength bound for features encoded with Gaussian noise ``cov`` around ``f_mean``.

    ``mc_samples=None`` evaluates the expected reconstruction error in closed
    form, which is only available for affine decoders.
    """
    f_mean = np.asarray(f_mean, dtype=float)
    cov = as_cov(cov, len(f_mean))
    fd = GaussianFull(f_mean, cov)
    ys = None
    if mc_samples is None:
        e_rec = affine_expected_rec(dec, fd, x)
    else:
        rng = rng if rng is not None else np.random.default_rng()
        if isinstance(prior, GaussianPrior):
            e_rec = expected_reconstruction_error(dec, fd, x, mc_samples, rng)
        else:
            ys = f_mean + rng.standard_normal((mc_samples, len(f_mean))) @ fd.chol.T
            e_rec = float(np.mean(reconstruction_error(dec, ys, x)))
    return e_rec + neg_expected_log_prior(prior, f_mean, cov, ys) + _entropy_terms(cov)


@dataclass(frozen=True)
class DenoisingGrad:
    value: float  # Monte Carlo estimate of the bound with the same draws
    encoder: np.ndarray
    decoder: np.ndarray
    feature_grad: np.ndarray  # averaged gradient at the feature layer, prior term included
    draws: np.ndarray


def _draws(f_mean, cov, mc_samples, rng, z=None):
    L = _chol(cov)
    if z is None:
        z = rng.standard_normal((mc_samples, len(f_mean)))
    return f_mean + z @ L.T


def denoising_grad(
    prior: GaussianPrior,
    f_net: ng.Network,
    dec: Decoder,
    x,
    cov,
    mc_samples: int = 16,
    rng: np.random.Generator | None = None,
    z: np.ndarray | None = None,
) -> DenoisingGrad:
    """Gradient of the Monte Carlo denoising bound w.r.t. encoder and decoder weights.

    Each draw is backpropagated through the decoder down to the feature layer;
    the feature-layer vectors are averaged and sent through the encoder once.
    ``cov`` is held fixed. Pass ``z`` (standard normal draws) to reuse noise.
    """
    if not isinstance(prior, GaussianPrior):
        raise TypeError("denoising gradients need a Gaussian prior")
    x = np.asarray(x, dtype=float)
    rec_f = ng.forward(f_net, x)
    m = rec_f.outputs(f_net)
    cov = as_cov(cov, len(m))
    ys = _draws(m, cov, mc_samples, rng if rng is not None else np.random.default_rng(), z)
    n = len(ys)
    rec_g = ng.forward(dec.net, ys)
    x_hat = rec_g.outputs(dec.net)
    inv = 1.0 / dec.output.sigma ** 2
    gw_dec, gy = ng.backprop(dec.net, rec_g, (x_hat - x) * inv / n, return_inputs=True)
    g_feat = gy.sum(axis=0) + m / prior.var
    gw_enc = ng.backprop(f_net, rec_f, g_feat)
    value = float(np.mean(reconstruction_error(dec, ys, x))) + neg_expected_log_prior(prior, m, cov) + _entropy_terms(cov)
    return DenoisingGrad(value, gw_enc, gw_dec, g_feat, ys)


def denoising_grad_naive(prior: GaussianPrior, f_net: ng.Network, dec: Decoder, x, cov, draws: np.ndarray):
    """Per-draw full backpropagation through decoder and encoder, then averaged.

    Reference path for :func:`denoising_grad`; same draws, no factorization.
    """
    x = np.asarray(x, dtype=float)
    rec_f = ng.forward(f_net, x)
    m = rec_f.outputs(f_net)
    inv = 1.0 / dec.output.sigma ** 2
    n = len(draws)
    enc = np.zeros_like(f_net.weights)
    dec_g = np.zeros_like(dec.net.weights)
    for y in draws:
        rec_g = ng.forward(dec.net, y)
        gw, gy = ng.backprop(dec.net, rec_g, (rec_g.outputs(dec.net) - x) * inv, return_inputs=True)
        dec_g += gw / n
        enc += ng.backprop(f_net, rec_f, gy + m / prior.var) / n
    return enc, dec_g


def taylor_bound(
    prior: GaussianPrior,
    dec: Decoder,
    f_mean,
    cov,
    x,
    H: HessianResult | np.ndarray | None = None,
    hessian: str = "exact_fd",
) -> float:
    """Second-order expansion of the denoising bound around ``f_mean``."""
    f_mean = np.asarray(f_mean, dtype=float)
    d = len(f_mean)
    cov = as_cov(cov, d)
    if H is None:
        H = feature_hessian(hessian, prior, dec, f_mean, x)
    Hm = H.values if isinstance(H, HessianResult) else np.asarray(H, dtype=float)
    if Hm.ndim == 1:
        Hm = np.diag(Hm)
    return (
        reconstruction_error(dec, f_mean, x)
        - log_density(prior, f_mean)
        + 0.5 * float(np.sum(cov * Hm.T))
        + _entropy_terms(cov)
    )
