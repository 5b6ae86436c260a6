"""Codelength bounds that penalize large feature-to-output derivatives."""

from __future__ import annotations

import numpy as np

from . import netgraph as ng
from .codelength import Decoder, reconstruction_error
from .hessian import decoder_jacobian
from .outvar import LOG_2PI
from .priors import GaussianPrior, log_density


def contractive_penalty(prior: GaussianPrior, dec: Decoder, f_mean, variant: str = "diag") -> float:
    """1/2 log det of diag(1/lambda) + J^T D J (``full``) or of its diagonal (``diag``)."""
    if not isinstance(prior, GaussianPrior):
        raise TypeError("the contractive bound needs a Gaussian prior")
    J = decoder_jacobian(dec, f_mean)
    D = 1.0 / dec.output.sigma ** 2
    if variant == "diag":
        return float(0.5 * np.sum(np.log(1.0 / prior.var + D @ (J * J))))
    if variant == "full":
        M = np.diag(1.0 / prior.var) + J.T @ (D[:, None] * J)
        return float(np.sum(np.log(np.diag(np.linalg.cholesky(M)))))
    raise ValueError(f"unknown variant {variant!r}")


def contractive_bound(prior: GaussianPrior, dec: Decoder, f_mean, x, variant: str = "diag") -> float:
    f_mean = np.asarray(f_mean, dtype=float)
    return (
        reconstruction_error(dec, f_mean, x)
        - log_density(prior, f_mean)
        + contractive_penalty(prior, dec, f_mean, variant)
        - 0.5 * len(f_mean) * LOG_2PI
    )


def is_single_layer(net: ng.Network) -> bool:
    return len(net.graph.levels) == 1


def penalty_grads(prior: GaussianPrior, dec: Decoder, f_mean, variant: str, step: float = 1e-6):
    """Central-difference gradients of the penalty w.r.t. decoder weights and features.

    Only offered for single-layer decoders, where the penalty is a cheap
    function of the squared weights.
    """
    if not is_single_layer(dec.net):
        raise ValueError("numerical contractive gradients are limited to single-layer decoders")
    w = dec.net.weights
    f_mean = np.asarray(f_mean, dtype=float)

    def pen(weights, y):
        return contractive_penalty(prior, dec.with_net(dec.net.with_weights(weights)), y, variant)

    gw = np.empty_like(w)
    for k in range(len(w)):
        e = np.zeros_like(w)
        e[k] = step
        gw[k] = (pen(w + e, f_mean) - pen(w - e, f_mean)) / (2 * step)
    gy = np.empty_like(f_mean)
    for i in range(len(f_mean)):
        e = np.zeros_like(f_mean)
        e[i] = step
        gy[i] = (pen(w, f_mean + e) - pen(w, f_mean - e)) / (2 * step)
    return gw, gy
