"""Analytic gradients of every training objective against central differences."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import netgraph as ng
from .contractive import is_single_layer
from .logdet_grad import logdet_curvature_grad
from .noise import NoiseSpec
from .priors import GaussianPrior
from .train import Model, Objective, evaluate, get_params, resolve_covs, set_params

TOLERANCE = 1e-4


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    worst_rel_err: float  # max_k |analytic_k - numeric_k| / max(1, max_k |numeric_k|)
    n_params: int
    skipped: str | None = None

    @property
    def passed(self) -> bool:
        return self.skipped is not None or self.worst_rel_err <= TOLERANCE


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.shape != numeric.shape:
        raise ValueError("gradient shapes differ")
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / max(1.0, np.max(np.abs(numeric))))


def central_differences(f, theta: np.ndarray, step: float) -> np.ndarray:
    g = np.empty_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = step
        g[k] = (f(theta + e) - f(theta - e)) / (2 * step)
    return g


def _objective_cases(model: Model):
    if model.features == "bernoulli":
        return [("reconstruction", model, Objective("reconstruction")), ("f_gen", model, Objective("f_gen"))]
    with_var = model if model.log_var is not None else replace(model, log_var=np.full(model.dim_y, -1.0))
    no_var = replace(model, log_var=None)
    cases = [
        ("reconstruction", no_var, Objective("reconstruction")),
        ("f_gen", with_var, Objective("f_gen", mc_samples=4)),
        ("denoising_fixed", no_var, Objective("denoising", NoiseSpec("fixed", 0.1), mc_samples=4)),
        ("denoising_optimal_diag", no_var, Objective("denoising", NoiseSpec("optimal_diag"), mc_samples=4)),
        ("logdet_direct", no_var, Objective("logdet_direct")),
    ]
    for variant in ("diag", "full"):
        cases.append((f"contractive_{variant}", no_var, Objective("contractive", variant=variant)))
    return cases


def grad_check(model: Model, X, seed: int, step: float = 1e-6, corrupt: str | None = None) -> list[GradCheckResult]:
    """Worst relative gradient error of each objective on the samples ``X``.

    Monte Carlo objectives reuse the same draws for every evaluation and the
    per-sample optimal noise is frozen at the starting weights. ``corrupt``
    names a check whose analytic gradient is perturbed on purpose, to exercise
    the failure path.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    results = []
    for name, m, obj in _objective_cases(model):
        if obj.kind == "contractive" and not is_single_layer(m.decoder.net):
            results.append(GradCheckResult(name, 0.0, 0, "decoder has more than one layer"))
            continue
        covs = None
        if obj.kind == "denoising" and obj.noise.kind != "fixed":
            covs = resolve_covs(m, obj, ng.outputs(m.encoder, X), X)

        def f(theta, m=m, obj=obj, covs=covs):
            return evaluate(set_params(m, theta), X, obj, np.random.default_rng(seed), covs)

        theta = get_params(m)
        analytic = f(theta).grads.flat()
        numeric = central_differences(lambda t: f(t).loss, theta, step)
        if corrupt == name:
            analytic = analytic.copy()
            analytic[0] += 1.0
        results.append(GradCheckResult(name, relative_error(analytic, numeric), len(theta)))

    # the log-det curvature term on its own, per decoder weight
    dec = model.decoder
    prior = model.prior if isinstance(model.prior, GaussianPrior) else GaussianPrior(np.ones(model.dim_y))
    ys = ng.outputs(model.encoder, X)
    w0 = dec.net.weights

    def S(w):
        return logdet_curvature_grad(dec.with_net(dec.net.with_weights(w)), prior, ys).S

    analytic = logdet_curvature_grad(dec, prior, ys).grad
    if corrupt == "logdet_curvature":
        analytic = analytic.copy()
        analytic[0] += 1.0
    numeric = central_differences(S, w0, step)
    results.append(GradCheckResult("logdet_curvature", relative_error(analytic, numeric), len(w0)))
    return results
