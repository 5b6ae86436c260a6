"""Per-component Gaussian output variances and the log-error objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = float(np.log(2 * np.pi))


@dataclass(frozen=True)
class OutputModel:
    """Turns a deterministic reconstruction x_hat into N(x_hat, diag(sigma^2)).

    ``mode`` is "fixed" or "learned"; ``epsilon`` is the data quantization level.
    """

    sigma: np.ndarray
    mode: str = "fixed"
    epsilon: float = 0.0

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        if np.any(~(s > 0)):
            raise ValueError("output standard deviations must be positive")
        if self.mode not in ("fixed", "learned"):
            raise ValueError(f"unknown output mode {self.mode!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        object.__setattr__(self, "sigma", s)

    def refit(self, mean_sq_residuals) -> "OutputModel":
        return OutputModel(optimal_sigma_out(mean_sq_residuals, self.epsilon), self.mode, self.epsilon)


def optimal_sigma_out(residual_squares, epsilon: float = 0.0) -> np.ndarray:
    """sigma_i = sqrt(E_i + eps^2), E_i the per-component mean squared residual."""
    E = np.asarray(residual_squares, dtype=float)
    if np.any(E < 0):
        raise ValueError("mean squared residuals must be non-negative")
    sigma = np.sqrt(E + epsilon ** 2)
    if np.any(sigma == 0):
        raise ValueError("zero residuals with epsilon = 0 give a degenerate output variance")
    return sigma


def mean_sq_residuals(x, x_hat) -> np.ndarray:
    r = np.atleast_2d(np.asarray(x, dtype=float) - np.asarray(x_hat, dtype=float))
    return np.mean(r * r, axis=0)


def gaussian_rec_total(x, x_hat, sigma) -> float:
    """Dataset reconstruction codelength under per-component Gaussian outputs."""
    r = np.atleast_2d(np.asarray(x, dtype=float) - np.asarray(x_hat, dtype=float))
    sigma = np.asarray(sigma, dtype=float)
    return float(np.sum(r * r / (2 * sigma ** 2) + np.log(sigma) + 0.5 * LOG_2PI))


def log_error_objective(E, epsilon: float, n_samples: int) -> float:
    """(n/2) sum_i log(E_i + eps^2), without the additive constant."""
    E = np.asarray(E, dtype=float)
    return float(0.5 * n_samples * np.sum(np.log(E + epsilon ** 2)))


def log_error_constant(dim: int, n_samples: int) -> float:
    """The constant that turns :func:`log_error_objective` into the codelength at optimal sigma."""
    return float(n_samples * dim * 0.5 * (1 + LOG_2PI))


def rec_at_optimum(E, n_samples: int) -> float:
    """Codelength at sigma_i^2 = E_i, written as n * sum_i (1/2 + log(E_i)/2 + log(2 pi)/2)."""
    E = np.asarray(E, dtype=float)
    return float(n_samples * np.sum(0.5 + 0.5 * np.log(E) + 0.5 * LOG_2PI))
