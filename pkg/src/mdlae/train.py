"""Objectives, gradient steps and the training loop."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import xlogy

from . import netgraph as ng
from .codelength import (
    CodelengthReport,
    Decoder,
    OracleInfeasible,
    QuadratureSpec,
    affine_expected_rec,
    expected_reconstruction_error,
    kl_to_prior,
    l_gen_exact,
    reconstruction_error,
    rec_from_outputs,
    two_part_codelength,
)
from .contractive import contractive_penalty, is_single_layer, penalty_grads
from .logdet_grad import logdet_curvature_grad
from .noise import NoiseSpec, neg_expected_log_prior
from .hessian import gn_layerwise_diag, optimal_noise
from .outvar import LOG_2PI, mean_sq_residuals
from .priors import (
    Bernoulli,
    GaussianDiag,
    GaussianFull,
    GaussianPrior,
    P_CLAMP,
    Prior,
    binary_grid,
    bernoulli_weights,
    fit_prior,
    is_discrete,
    log_density,
    sample,
)

log = logging.getLogger(__name__)

OBJECTIVES = ("reconstruction", "f_gen", "denoising", "logdet_direct", "contractive")
ORACLE_BUDGET = 50_000_000


class TrainingDiverged(FloatingPointError):
    pass


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent named random stream derived from the experiment seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass(frozen=True)
class Model:
    encoder: ng.Network
    decoder: Decoder
    prior: Prior
    features: str = "gaussian"  # or "bernoulli"
    log_var: np.ndarray | None = None  # learned feature noise (gaussian f_gen)

    def __post_init__(self):
        if self.features not in ("gaussian", "bernoulli"):
            raise ValueError(f"unknown feature type {self.features!r}")
        if self.encoder.n_out != self.decoder.dim_y or self.prior.dim != self.decoder.dim_y:
            raise ValueError("encoder output, decoder input and prior dimensions must agree")
        if self.features == "bernoulli":
            if not is_discrete(self.prior):
                raise ValueError("Bernoulli features need a discrete prior")
            if np.any(self.encoder.graph.codes[self.encoder.graph.outputs] != 1):
                raise ValueError("Bernoulli features need sigmoid encoder outputs")
        elif not isinstance(self.prior, GaussianPrior):
            raise ValueError("Gaussian features need a Gaussian prior")

    @property
    def dim_y(self) -> int:
        return self.decoder.dim_y


@dataclass(frozen=True)
class Objective:
    kind: str
    noise: NoiseSpec | None = None
    variant: str = "diag"  # contractive only
    mc_samples: int = 16

    def __post_init__(self):
        if self.kind not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.kind!r}")
        if self.kind == "denoising" and self.noise is None:
            object.__setattr__(self, "noise", NoiseSpec())
        if self.variant not in ("diag", "full"):
            raise ValueError(f"unknown contractive variant {self.variant!r}")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be positive")

    def check(self, model: Model):
        if model.features == "bernoulli" and self.kind not in ("reconstruction", "f_gen"):
            raise ValueError(f"objective {self.kind!r} needs continuous features")
        if self.kind == "contractive" and not is_single_layer(model.decoder.net):
            raise ValueError("the contractive objective is trained on single-layer decoders; use logdet_direct")
        if self.kind == "f_gen" and model.features == "gaussian" and model.log_var is None:
            raise ValueError("continuous f_gen needs a learned feature noise (log_var)")


@dataclass
class Grads:
    encoder: np.ndarray
    decoder: np.ndarray
    log_var: np.ndarray | None = None

    def flat(self) -> np.ndarray:
        parts = [self.encoder, self.decoder]
        if self.log_var is not None:
            parts.append(self.log_var)
        return np.concatenate(parts)


@dataclass
class Evaluation:
    loss: float
    l_rec: float
    kl_term: float
    extra_term: float
    grads: Grads


# -- per-objective gradients ----------------------------------------------


def _rec_and_grad(dec: Decoder, ys: np.ndarray, X: np.ndarray, weights=None):
    """Per-row L_rec, decoder weight gradient and feature gradient of sum_r weights_r L_rec_r."""
    rec = ng.forward(dec.net, ys)
    x_hat = rec.outputs(dec.net)
    inv = 1.0 / dec.output.sigma ** 2
    L = rec_from_outputs(x_hat, X, dec.output.sigma)
    up = (x_hat - X) * inv
    if weights is not None:
        up = up * weights[:, None]
    gw, gy = ng.backprop(dec.net, rec, up, return_inputs=True)
    return L, gw, gy


def _bernoulli_terms(model: Model, X, objective: Objective) -> Evaluation:
    enc_rec = ng.forward(model.encoder, X)
    p = enc_rec.outputs(model.encoder)
    logit_p = enc_rec.V[:, model.encoder.graph.outputs]
    bsz, d = p.shape
    ys = binary_grid(d)
    K = len(ys)
    F = np.where(ys[None, :, :] > 0.5, p[:, None, :], 1 - p[:, None, :])  # (B, K, d)
    pi = np.prod(F, axis=2)
    rows_y = np.tile(ys, (bsz, 1))
    rows_x = np.repeat(X, K, axis=0)
    L, g_dec, _ = _rec_and_grad(model.decoder, rows_y, rows_x, pi.ravel())
    L = L.reshape(bsz, K)
    e_rec = np.sum(pi * L, axis=1)
    sign = 2 * ys - 1  # (K, d)
    dE = np.empty((bsz, d))
    for i in range(d):
        rest = np.prod(np.delete(F, i, axis=2), axis=2)
        dE[:, i] = np.sum(L * rest * sign[None, :, i], axis=1)
    kl = 0.0
    up = dE
    if objective.kind == "f_gen":
        q = np.clip(model.prior.q, P_CLAMP, 1 - P_CLAMP)
        kl = float(np.sum(xlogy(p, p) + xlogy(1 - p, 1 - p) - p * np.log(q) - (1 - p) * np.log1p(-q)))
        up = dE + (logit_p - np.log(q / (1 - q)))
    g_enc = ng.backprop(model.encoder, enc_rec, up)
    e = float(np.sum(e_rec))
    return Evaluation(e + kl, e, kl, 0.0, Grads(g_enc, g_dec))


def _gaussian_fgen_terms(model: Model, X, objective: Objective, rng) -> Evaluation:
    lam = model.prior.var
    enc_rec = ng.forward(model.encoder, X)
    m = enc_rec.outputs(model.encoder)
    bsz, d = m.shape
    n = objective.mc_samples
    v = np.exp(model.log_var)
    z = rng.standard_normal((bsz, n, d))
    ys = (m[:, None, :] + np.sqrt(v) * z).reshape(-1, d)
    L, g_dec, gy = _rec_and_grad(model.decoder, ys, np.repeat(X, n, axis=0), np.full(bsz * n, 1.0 / n))
    gy = gy.reshape(bsz, n, d)
    e_rec = float(np.sum(L) / n)
    kl = float(0.5 * np.sum((v + m * m) / lam - 1 + np.log(lam) - model.log_var))
    g_feat = gy.sum(axis=1) + m / lam
    g_enc = ng.backprop(model.encoder, enc_rec, g_feat)
    g_lv = 0.5 * np.sqrt(v) * np.sum(gy * z, axis=(0, 1)) + 0.5 * bsz * (v / lam - 1)
    return Evaluation(e_rec + kl, e_rec, kl, 0.0, Grads(g_enc, g_dec, g_lv))


def resolve_covs(model: Model, objective: Objective, means: np.ndarray, X: np.ndarray) -> list[np.ndarray]:
    return [objective.noise.resolve(model.prior, model.decoder, m, x) for m, x in zip(means, X)]


def _denoising_terms(model: Model, X, objective: Objective, rng, covs=None) -> Evaluation:
    lam = model.prior.var
    enc_rec = ng.forward(model.encoder, X)
    m = enc_rec.outputs(model.encoder)
    bsz, d = m.shape
    n = objective.mc_samples
    if covs is None:
        covs = resolve_covs(model, objective, m, X)
    chols = np.array([np.linalg.cholesky(c) for c in covs])
    z = rng.standard_normal((bsz, n, d))
    ys = (m[:, None, :] + np.einsum("bij,bnj->bni", chols, z)).reshape(-1, d)
    L, g_dec, gy = _rec_and_grad(model.decoder, ys, np.repeat(X, n, axis=0), np.full(bsz * n, 1.0 / n))
    e_rec = float(np.sum(L) / n)
    kl = 0.0
    for mi, c, ch in zip(m, covs, chols):
        kl += neg_expected_log_prior(model.prior, mi, c) - np.sum(np.log(np.diag(ch))) - 0.5 * d * (1 + LOG_2PI)
    g_feat = gy.reshape(bsz, n, d).sum(axis=1) + m / lam
    g_enc = ng.backprop(model.encoder, enc_rec, g_feat)
    return Evaluation(e_rec + kl, e_rec, float(kl), 0.0, Grads(g_enc, g_dec))


def _deterministic_terms(model: Model, X, objective: Objective) -> Evaluation:
    lam = model.prior.var
    dec = model.decoder
    enc_rec = ng.forward(model.encoder, X)
    m = enc_rec.outputs(model.encoder)
    bsz, d = m.shape
    L, g_dec, gy = _rec_and_grad(dec, m, X)
    l_rec = float(np.sum(L))
    if objective.kind == "reconstruction":
        return Evaluation(l_rec, l_rec, 0.0, 0.0, Grads(ng.backprop(model.encoder, enc_rec, gy), g_dec))
    kl = float(-np.sum(log_density(model.prior, m)))
    g_feat = gy + m / lam
    if objective.kind == "logdet_direct":
        ld = logdet_curvature_grad(dec, model.prior, m)
        extra = 0.5 * ld.S - 0.5 * bsz * d * LOG_2PI
        g_dec = g_dec + 0.5 * ld.grad
        g_feat = g_feat + 0.5 * ld.input_grad
    else:
        extra = -0.5 * bsz * d * LOG_2PI
        for b in range(bsz):
            extra += contractive_penalty(model.prior, dec, m[b], objective.variant)
            gw, gyp = penalty_grads(model.prior, dec, m[b], objective.variant)
            g_dec = g_dec + gw
            g_feat[b] += gyp
    g_enc = ng.backprop(model.encoder, enc_rec, g_feat)
    return Evaluation(l_rec + kl + extra, l_rec, kl, float(extra), Grads(g_enc, g_dec))


def evaluate(model: Model, X, objective: Objective, rng: np.random.Generator, covs=None) -> Evaluation:
    """Objective summed over the rows of ``X`` and its gradient.

    Monte Carlo objectives draw their noise from ``rng``; optimal-noise
    covariances are resolved at the current weights unless ``covs`` is given,
    and are held fixed inside the gradient.
    """
    objective.check(model)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if model.features == "bernoulli":
        ev = _bernoulli_terms(model, X, objective)
    elif objective.kind == "f_gen":
        ev = _gaussian_fgen_terms(model, X, objective, rng)
    elif objective.kind == "denoising":
        ev = _denoising_terms(model, X, objective, rng, covs)
    else:
        ev = _deterministic_terms(model, X, objective)
    if model.log_var is not None and ev.grads.log_var is None:
        ev.grads.log_var = np.zeros_like(model.log_var)  # unused by this objective
    return ev


# -- parameter plumbing ---------------------------------------------------


def get_params(model: Model) -> np.ndarray:
    parts = [model.encoder.weights, model.decoder.net.weights]
    if model.log_var is not None:
        parts.append(model.log_var)
    return np.concatenate(parts)


def set_params(model: Model, theta: np.ndarray) -> Model:
    ne, nd = len(model.encoder.weights), len(model.decoder.net.weights)
    enc = model.encoder.with_weights(theta[:ne])
    dec = model.decoder.with_net(model.decoder.net.with_weights(theta[ne:ne + nd]))
    lv = None if model.log_var is None else np.array(theta[ne + nd:])
    return replace(model, encoder=enc, decoder=dec, log_var=lv)


@dataclass
class StepResult:
    model: Model
    evaluation: Evaluation
    velocity: np.ndarray


def step(model: Model, batch, objective: Objective, lr: float, rng, momentum: float = 0.0, velocity=None) -> StepResult:
    """One gradient-descent update on the batch-summed objective."""
    ev = evaluate(model, batch, objective, rng)
    if not np.isfinite(ev.loss) or not np.all(np.isfinite(ev.grads.flat())):
        raise TrainingDiverged(
            f"non-finite objective: loss={ev.loss!r} l_rec={ev.l_rec!r} kl={ev.kl_term!r} extra={ev.extra_term!r}"
        )
    g = ev.grads.flat()
    vel = g if velocity is None or momentum == 0 else momentum * velocity + g
    theta = get_params(model) - lr * vel
    return StepResult(set_params(model, theta), ev, vel)


# -- refits ---------------------------------------------------------------


def feature_laws(model: Model, X, objective: Objective | None = None) -> list:
    """The feature distribution f(x) the codelength bounds use for each sample."""
    X = np.atleast_2d(X)
    out = ng.outputs(model.encoder, X)
    if model.features == "bernoulli":
        return [Bernoulli(p) for p in out]
    if model.log_var is not None and (objective is None or objective.kind == "f_gen"):
        return [GaussianDiag(m, np.exp(model.log_var)) for m in out]
    if objective is not None and objective.kind == "denoising":
        return [GaussianFull(m, c) for m, c in zip(out, resolve_covs(model, objective, out, X))]
    laws = []
    for m, x in zip(out, X):
        H = gn_layerwise_diag(model.decoder, model.prior, m, x)
        laws.append(GaussianDiag(m, np.diag(optimal_noise(H, "diagonal").cov)))
    return laws


def refit_prior(model: Model, X, objective: Objective) -> Model:
    family = "bernoulli" if model.features == "bernoulli" else "gaussian"
    return replace(model, prior=fit_prior(feature_laws(model, X, objective), family))


def noisy_mean_sq_residuals(model: Model, X, objective: Objective, rng) -> np.ndarray:
    """Per-component mean squared residual, feature noise included."""
    X = np.atleast_2d(X)
    dec = model.decoder
    if objective.kind in ("reconstruction", "logdet_direct", "contractive") and model.features == "gaussian":
        return mean_sq_residuals(X, ng.outputs(dec.net, ng.outputs(model.encoder, X)))
    total = np.zeros(dec.dim_x)
    for law, x in zip(feature_laws(model, X, objective), X):
        if isinstance(law, Bernoulli):
            ys = binary_grid(law.dim)
            w = bernoulli_weights(law.p, ys)
        else:
            ys = sample(law, rng, objective.mc_samples)
            w = np.full(len(ys), 1.0 / len(ys))
        r = ng.outputs(dec.net, ys) - x
        total += w @ (r * r)
    return total / len(X)


# -- reports --------------------------------------------------------------


def _oracle_feasible(model: Model, n: int, quad: QuadratureSpec) -> bool:
    d = model.dim_y
    if model.features == "bernoulli":
        return d <= 20 and n * 2 ** d <= ORACLE_BUDGET
    return d <= quad.max_dim and n * (2 * quad.points - 1) ** d <= ORACLE_BUDGET


def codelength_report(
    model: Model,
    X,
    objective: Objective,
    rng: np.random.Generator,
    mc_samples: int = 1000,
    oracle: str = "auto",
    quadrature: QuadratureSpec | None = None,
) -> CodelengthReport:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    quad = quadrature or QuadratureSpec()
    use_oracle = oracle == "on" or (oracle == "auto" and _oracle_feasible(model, len(X), quad))
    dec, prior = model.decoder, model.prior
    report = CodelengthReport()
    skipped = []
    for x, law in zip(X, feature_laws(model, X, objective)):
        row = {}
        if isinstance(law, Bernoulli):
            row["l_rec"] = reconstruction_error(dec, (law.p > 0.5).astype(float), x)
            row["e_l_rec"] = expected_reconstruction_error(dec, law, x)
            row["l_two_part"] = two_part_codelength(prior, dec, law, x)
        else:
            row["l_rec"] = reconstruction_error(dec, law.mean, x)
            if dec.net.is_affine:
                row["e_l_rec"] = affine_expected_rec(dec, law, x)
            else:
                row["e_l_rec"] = expected_reconstruction_error(dec, law, x, mc_samples, rng)
        row["kl_feat_prior"] = kl_to_prior(law, prior)
        row["l_f_gen"] = row["e_l_rec"] + row["kl_feat_prior"]
        if use_oracle:
            try:
                row["l_gen_oracle"] = l_gen_exact(prior, dec, x, quad)[0]
            except OracleInfeasible as exc:
                if oracle == "on":
                    raise
                skipped.append(str(exc))
        report.add(**row)
    if skipped:
        log.warning("oracle skipped for %d of %d samples; first reason: %s", len(skipped), len(X), skipped[0])
    return report


# -- training loop --------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    objective: Objective
    seed: int
    learning_rate: float = 1e-2
    epochs: int = 10
    batch_size: int = 16
    momentum: float = 0.0
    prior_refit: int = 0  # epochs between prior refits; 0 disables
    sigma_refit: int = 1  # epochs between output-sigma refits when sigma is learned
    report_mc_samples: int = 1000
    oracle: str = "auto"
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    max_steps: int | None = None  # stop early after this many updates

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("learning_rate and epochs must be non-negative, batch_size positive")
        if self.momentum < 0 or self.momentum >= 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        if self.oracle not in ("auto", "on", "off"):
            raise ValueError(f"unknown oracle mode {self.oracle!r}")


@dataclass
class TrainResult:
    model: Model
    log: list[tuple]  # (epoch, loss, l_rec, kl_term, extra_term), per-sample averages
    report: CodelengthReport
    steps: int

    def log_tsv(self) -> str:
        lines = ["epoch\tloss\tl_rec\tkl_term\textra_term"]
        lines += ["\t".join([str(r[0])] + [repr(float(v)) for v in r[1:]]) for r in self.log]
        return "\n".join(lines) + "\n"


def run(config: TrainConfig, data, model: Model) -> TrainResult:
    """Shuffled mini-batch descent, periodic refits, then the final codelength report."""
    X = np.atleast_2d(np.asarray(data, dtype=float))
    if X.shape[1] != model.decoder.dim_x or X.shape[1] != model.encoder.n_in:
        raise ValueError("data dimension does not match the networks")
    obj = config.objective
    obj.check(model)
    shuffle = substream(config.seed, "shuffle")
    noise = substream(config.seed, "noise")
    rows, velocity, steps = [], None, 0
    max_steps = config.max_steps
    n = len(X)
    for epoch in range(1, config.epochs + 1):
        order = shuffle.permutation(n)
        tot = np.zeros(4)
        for start in range(0, n, config.batch_size):
            if max_steps is not None and steps >= max_steps:
                break
            batch = X[order[start:start + config.batch_size]]
            res = step(model, batch, obj, config.learning_rate, noise, config.momentum, velocity)
            model, velocity = res.model, res.velocity
            ev = res.evaluation
            tot += (ev.loss, ev.l_rec, ev.kl_term, ev.extra_term)
            steps += 1
        rows.append((epoch, *(tot / n)))
        if model.decoder.output.mode == "learned" and config.sigma_refit and epoch % config.sigma_refit == 0:
            E = noisy_mean_sq_residuals(model, X, obj, noise)
            model = replace(model, decoder=model.decoder.with_output(model.decoder.output.refit(E)))
        if config.prior_refit and epoch % config.prior_refit == 0:
            model = refit_prior(model, X, obj)
        if max_steps is not None and steps >= max_steps:
            break
    report = codelength_report(
        model, X, obj, substream(config.seed, "report"), config.report_mc_samples, config.oracle, config.quadrature
    )
    return TrainResult(model, rows, report, steps)
