"""Elementary feature-space models and feature distributions.

All codelengths are in nats.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import xlogy

LAMBDA_MIN = 1e-8
P_CLAMP = 1e-6
LOG_2PI = float(np.log(2 * np.pi))


# -- priors ---------------------------------------------------------------


@dataclass(frozen=True)
class GaussianPrior:
    """N(0, diag(var))."""

    var: np.ndarray

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.var, dtype=float))
        if v.ndim != 1 or np.any(~(v > 0)):
            raise ValueError("prior variances must be positive")
        object.__setattr__(self, "var", v)

    @property
    def dim(self) -> int:
        return len(self.var)


@dataclass(frozen=True)
class BernoulliPrior:
    q: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if q.ndim != 1 or np.any(~((q > 0) & (q < 1))):
            raise ValueError("Bernoulli prior parameters must lie in (0, 1)")
        object.__setattr__(self, "q", q)

    @property
    def dim(self) -> int:
        return len(self.q)


@dataclass(frozen=True)
class UniformBinaryPrior:
    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be at least 1")

    @property
    def dim(self) -> int:
        return self.d

    @property
    def q(self) -> np.ndarray:
        return np.full(self.d, 0.5)


Prior = Union[GaussianPrior, BernoulliPrior, UniformBinaryPrior]


def is_discrete(prior: Prior) -> bool:
    return isinstance(prior, (BernoulliPrior, UniformBinaryPrior))


# -- feature distributions ------------------------------------------------


@dataclass(frozen=True)
class Dirac:
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", np.atleast_1d(np.asarray(self.y, dtype=float)))

    @property
    def dim(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class GaussianDiag:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        v = np.broadcast_to(np.asarray(self.var, dtype=float), m.shape).copy()
        if np.any(~(v > 0)):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "var", v)

    @property
    def dim(self) -> int:
        return len(self.mean)


@dataclass(frozen=True)
class GaussianFull:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        c = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if c.shape != (len(m), len(m)) or not np.allclose(c, c.T, rtol=0, atol=1e-12 * max(1.0, np.abs(c).max())):
            raise ValueError("covariance must be a symmetric d x d matrix")
        try:
            chol = np.linalg.cholesky(c)
        except np.linalg.LinAlgError:
            raise ValueError("covariance is not positive definite") from None
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", c)
        object.__setattr__(self, "chol", chol)

    @property
    def dim(self) -> int:
        return len(self.mean)


@dataclass(frozen=True)
class Bernoulli:
    p: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if np.any(~((p >= 0) & (p <= 1))):
            raise ValueError("Bernoulli parameters must lie in [0, 1]")
        object.__setattr__(self, "p", p)

    @property
    def dim(self) -> int:
        return len(self.p)


FeatureDistribution = Union[Dirac, GaussianDiag, GaussianFull, Bernoulli]


# -- helpers --------------------------------------------------------------


def binary_grid(d: int) -> np.ndarray:
    """All points of {0,1}^d, one per row."""
    return np.array(list(itertools.product((0.0, 1.0), repeat=d))).reshape(-1, d)


def bernoulli_weights(p: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Probability of each row of ``ys`` under independent Bernoulli(p)."""
    return np.prod(np.where(ys > 0.5, p, 1.0 - p), axis=-1)


def _check_binary(y: np.ndarray):
    if np.any((y != 0) & (y != 1)):
        raise ValueError("discrete priors only assign mass to 0/1 vectors")


def _clamped(q):
    return np.clip(q, P_CLAMP, 1 - P_CLAMP)


def log_density(prior: Prior, y) -> np.ndarray | float:
    """log rho(y); ``y`` may be one point or a batch of rows."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1:] != (prior.dim,):
        raise ValueError(f"feature of shape {y.shape} does not match prior dimension {prior.dim}")
    if isinstance(prior, GaussianPrior):
        lam = prior.var
        out = -0.5 * np.sum(y * y / lam + np.log(lam) + LOG_2PI, axis=-1)
    else:
        _check_binary(y)
        q = _clamped(prior.q)
        out = np.sum(np.where(y > 0.5, np.log(q), np.log1p(-q)), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def entropy(fd: FeatureDistribution) -> float:
    """Differential entropy for Gaussians, Shannon entropy for discrete laws."""
    if isinstance(fd, Dirac):
        return 0.0
    if isinstance(fd, GaussianDiag):
        return float(0.5 * np.sum(np.log(fd.var) + 1 + LOG_2PI))
    if isinstance(fd, GaussianFull):
        return float(np.sum(np.log(np.diag(fd.chol))) + 0.5 * fd.dim * (1 + LOG_2PI))
    p = fd.p
    return float(-np.sum(xlogy(p, p) + xlogy(1 - p, 1 - p)))


def as_full(fd: FeatureDistribution) -> GaussianFull:
    if isinstance(fd, GaussianFull):
        return fd
    if isinstance(fd, GaussianDiag):
        return GaussianFull(fd.mean, np.diag(fd.var))
    raise TypeError(f"{type(fd).__name__} is not Gaussian")


def kl_to_prior(fd: FeatureDistribution, prior: Prior) -> float:
    if fd.dim != prior.dim:
        raise ValueError("feature distribution and prior dimensions differ")
    if isinstance(prior, GaussianPrior):
        if isinstance(fd, Dirac):
            return float("inf")
        if isinstance(fd, (GaussianDiag, GaussianFull)):
            lam = prior.var
            if isinstance(fd, GaussianDiag):
                tr, logdet = np.sum(fd.var / lam), np.sum(np.log(fd.var))
            else:
                tr, logdet = np.sum(np.diag(fd.cov) / lam), 2 * np.sum(np.log(np.diag(fd.chol)))
            m = fd.mean
            return float(0.5 * (tr + np.sum(m * m / lam) - fd.dim + np.sum(np.log(lam)) - logdet))
        raise TypeError("Bernoulli features need a discrete prior")
    if isinstance(fd, Dirac):
        return float(-log_density(prior, fd.y))
    if isinstance(fd, Bernoulli):
        # independent components: the sum over {0,1}^d factorizes exactly
        p, q = fd.p, _clamped(prior.q)
        return float(np.sum(xlogy(p, p) + xlogy(1 - p, 1 - p) - p * np.log(q) - (1 - p) * np.log1p(-q)))
    raise TypeError("Gaussian features need a Gaussian prior")


def fit_prior(features: Sequence[FeatureDistribution], family: str) -> Prior:
    """Maximum-likelihood refit of the elementary model to a set of features.

    ``family`` is "gaussian" or "bernoulli". The Gaussian mean stays at 0, so
    the fitted variance is the second moment about 0, feature noise included.
    """
    if not features:
        raise ValueError("no features to fit")
    d = features[0].dim
    if any(f.dim != d for f in features):
        raise ValueError("inconsistent feature dimensions")
    if family == "gaussian":
        second = np.zeros(d)
        for f in features:
            if isinstance(f, Dirac):
                second += f.y ** 2
            elif isinstance(f, GaussianDiag):
                second += f.mean ** 2 + f.var
            elif isinstance(f, GaussianFull):
                second += f.mean ** 2 + np.diag(f.cov)
            else:
                raise TypeError("Bernoulli features cannot fit a Gaussian prior")
        return GaussianPrior(np.maximum(second / len(features), LAMBDA_MIN))
    if family == "bernoulli":
        total = np.zeros(d)
        for f in features:
            if isinstance(f, Bernoulli):
                total += f.p
            elif isinstance(f, Dirac):
                _check_binary(f.y)
                total += f.y
            else:
                raise TypeError("Gaussian features cannot fit a Bernoulli prior")
        return BernoulliPrior(_clamped(total / len(features)))
    raise ValueError(f"unknown prior family {family!r}")


def sample(fd: FeatureDistribution, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    shape = () if size is None else (size,)
    if isinstance(fd, Dirac):
        return np.broadcast_to(fd.y, shape + fd.y.shape).copy()
    if isinstance(fd, GaussianDiag):
        z = rng.standard_normal(shape + (fd.dim,))
        return fd.mean + np.sqrt(fd.var) * z
    if isinstance(fd, GaussianFull):
        z = rng.standard_normal(shape + (fd.dim,))
        return fd.mean + z @ fd.chol.T
    u = rng.random(shape + (fd.dim,))
    return (u < fd.p).astype(float)
