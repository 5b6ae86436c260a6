"""Feature-space Hessians of L_rec^y(x) - log rho(y) and the optimal feature noise."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import netgraph as ng
from .codelength import Decoder, decode, reconstruction_error
from .logdet_grad import layerwise_curvature
from .outvar import LOG_2PI
from .priors import GaussianPrior, log_density

log = logging.getLogger(__name__)

H_MIN = 1e-8


@dataclass(frozen=True)
class HessianResult:
    values: np.ndarray  # d x d matrix, or length-d diagonal
    kind: str  # "full" | "diagonal"
    source: str

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def diagonal(self) -> np.ndarray:
        return self.values if self.kind == "diagonal" else np.diag(self.values).copy()


def _require_gaussian(prior):
    if not isinstance(prior, GaussianPrior):
        raise TypeError("feature Hessians need a Gaussian prior")


def _residual_energy(dec: Decoder, x):
    """y -> sum_k (x_hat_k - x_k)^2 / 2 sigma_k^2, vectorized; constants dropped."""
    inv = 0.5 / dec.output.sigma ** 2

    def f(ys):
        r = decode(dec, ys) - x
        return np.sum(r * r * inv, axis=-1)

    return f


def _second_differences(f, y0: np.ndarray, h: float) -> np.ndarray:
    d = len(y0)
    E = np.eye(d) * h
    pts = [y0]
    for i in range(d):
        pts += [y0 + E[i], y0 - E[i]]
    for i in range(d):
        for j in range(i + 1, d):
            pts += [y0 + E[i] + E[j], y0 + E[i] - E[j], y0 - E[i] + E[j], y0 - E[i] - E[j]]
    vals = iter(f(np.array(pts)))
    f0 = next(vals)
    H = np.empty((d, d))
    for i in range(d):
        fp, fm = next(vals), next(vals)
        H[i, i] = (fp - 2 * f0 + fm) / (h * h)
    for i in range(d):
        for j in range(i + 1, d):
            pp, pm, mp, mm = (next(vals) for _ in range(4))
            H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4 * h * h)
    return H


def hessian_fd(prior: GaussianPrior, dec: Decoder, y0, x, step: float = 1e-4, check_step: float | None = None) -> HessianResult:
    """Central second differences of the reconstruction term; the Gaussian
    prior curvature diag(1/lambda) is added analytically.

    The estimate is cross-checked at ``check_step`` (default 10 * step); a large
    disagreement is logged, not raised.
    """
    _require_gaussian(prior)
    if step <= 0:
        raise ValueError("step must be positive")
    y0 = np.asarray(y0, dtype=float)
    x = np.asarray(x, dtype=float)
    f = _residual_energy(dec, x)
    H = _second_differences(f, y0, step)
    H = 0.5 * (H + H.T) + np.diag(1.0 / prior.var)
    if not np.all(np.isfinite(H)):
        raise FloatingPointError("non-finite Hessian entries")
    H2 = _second_differences(f, y0, check_step or 10 * step)
    H2 = 0.5 * (H2 + H2.T) + np.diag(1.0 / prior.var)
    gap = np.max(np.abs(H - H2)) / max(1.0, np.max(np.abs(H)))
    if gap > 1e-3:
        log.warning("finite-difference Hessian step check disagrees by %.3g", gap)
    return HessianResult(H, "full", "exact_fd")


def decoder_jacobian(dec: Decoder, y0) -> np.ndarray:
    """d x_hat / d y, shape (dim X, dim Y)."""
    return ng.input_jacobian(dec.net, y0)


def gauss_newton_full(prior: GaussianPrior, dec: Decoder, y0, x=None) -> HessianResult:
    _require_gaussian(prior)
    J = decoder_jacobian(dec, y0)
    D = 1.0 / dec.output.sigma ** 2
    H = np.diag(1.0 / prior.var) + J.T @ (D[:, None] * J)
    return HessianResult(0.5 * (H + H.T), "full", "gn_full")


def gn_layerwise_diag(dec: Decoder, prior: GaussianPrior, y0, x=None) -> HessianResult:
    _require_gaussian(prior)
    rec = ng.forward(dec.net, np.asarray(y0, dtype=float))
    return HessianResult(1.0 / prior.var + layerwise_curvature(dec, rec), "diagonal", "gn_diag")


HESSIAN_SOURCES = {
    "exact_fd": lambda prior, dec, y0, x: hessian_fd(prior, dec, y0, x),
    "gn_full": lambda prior, dec, y0, x: gauss_newton_full(prior, dec, y0, x),
    "gn_diag": lambda prior, dec, y0, x: gn_layerwise_diag(dec, prior, y0, x),
}


def feature_hessian(source: str, prior, dec, y0, x) -> HessianResult:
    try:
        fn = HESSIAN_SOURCES[source]
    except KeyError:
        raise ValueError(f"unknown Hessian source {source!r}; expected one of {sorted(HESSIAN_SOURCES)}") from None
    return fn(prior, dec, y0, x)


@dataclass(frozen=True)
class OptimalNoise:
    cov: np.ndarray  # always a d x d matrix
    half_logdet_h: float  # 1/2 log det H (or of diag H) after clamping


def optimal_noise(H: HessianResult, mode: str = "full", clamp: bool = True, h_min: float = H_MIN) -> OptimalNoise:
    """Sigma = H^-1 (full) or (diag H)^-1 (diagonal).

    With ``clamp`` eigenvalues/entries below ``h_min`` are raised to it;
    without, non-positive curvature is an error.
    """
    if mode not in ("full", "diagonal"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "diagonal" or H.kind == "diagonal":
        if mode == "full" and H.kind == "diagonal":
            mode = "diagonal"
        h = H.diagonal()
        if not np.all(np.isfinite(h)):
            raise FloatingPointError("non-finite Hessian diagonal")
        if clamp:
            h = np.maximum(h, h_min)
        elif np.any(h <= 0):
            i = int(np.argmin(h))
            raise ValueError(f"Hessian diagonal entry {i} is {h[i]:.6g}; curvature must be positive")
        return OptimalNoise(np.diag(1.0 / h), float(0.5 * np.sum(np.log(h))))
    M = 0.5 * (H.values + H.values.T)
    if not np.all(np.isfinite(M)):
        raise FloatingPointError("non-finite Hessian entries")
    evals, evecs = np.linalg.eigh(M)
    if clamp:
        evals = np.maximum(evals, h_min)
    elif evals[0] <= 0:
        raise ValueError(f"Hessian eigenvalue {evals[0]:.6g} is not positive")
    cov = (evecs / evals) @ evecs.T
    return OptimalNoise(0.5 * (cov + cov.T), float(0.5 * np.sum(np.log(evals))))


def noise_objective(cov, H) -> float:
    """-log det Sigma + Tr(Sigma H), the Sigma-dependent part of the Taylor bound (times 2)."""
    cov = np.asarray(cov, dtype=float)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise ValueError("covariance is not positive definite")
    return float(-logdet + np.sum(cov * np.asarray(H, dtype=float).T))


def optimal_noise_bound(prior: GaussianPrior, dec: Decoder, f_mean, x, H: HessianResult, mode: str = "full") -> float:
    """L_rec(x) - log rho(f(x)) + 1/2 log det H - d/2 log 2 pi at the optimal noise."""
    opt = optimal_noise(H, mode)
    f_mean = np.asarray(f_mean, dtype=float)
    return (
        reconstruction_error(dec, f_mean, x)
        - log_density(prior, f_mean)
        + opt.half_logdet_h
        - 0.5 * len(f_mean) * LOG_2PI
    )
