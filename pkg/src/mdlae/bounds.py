"""Side-by-side codelength bounds against the exact generative codelength."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import netgraph as ng
from .codelength import (
    OracleInfeasible,
    QuadratureSpec,
    expected_reconstruction_error,
    l_gen_exact,
    two_part_codelength,
    affine_expected_rec,
)
from .contractive import contractive_bound
from .noise import NoiseSpec, neg_expected_log_prior, taylor_bound
from .outvar import LOG_2PI
from .priors import Bernoulli, GaussianFull, kl_to_prior
from .train import Model

DISCRETE_TOL = 1e-9
CONTINUOUS_TOL = 1e-6  # covers the quadrature accuracy of the oracle


@dataclass
class BoundsTable:
    columns: list[str]
    rows: list[dict]  # one per sample, then an "all" row with sums
    checked: dict[str, bool]  # column -> whether the ordering check applies

    @property
    def all_ok(self) -> bool:
        return all(r["ordering"] == "OK" for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(r[c], full=True) for c in self.columns])
        return buf.getvalue()

    def to_text(self) -> str:
        cells = [self.columns] + [[_fmt(r[c]) for c in self.columns] for r in self.rows]
        widths = [max(len(row[i]) for row in cells) for i in range(len(self.columns))]
        lines = ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def _fmt(v, full: bool = False) -> str:
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    return repr(float(v)) if full else f"{v:.6f}"


def _finish(columns, rows, checked) -> BoundsTable:
    total = {"sample": "all"}
    for c in columns:
        if c in ("sample", "ordering"):
            continue
        vals = [r[c] for r in rows]
        total[c] = None if any(v is None for v in vals) else float(np.sum(vals))
    total["ordering"] = "OK" if all(r["ordering"] == "OK" for r in rows) else "VIOLATION"
    return BoundsTable(columns, rows + [total], checked)


def discrete_bounds(model: Model, X) -> BoundsTable:
    """l_gen <= l_f_gen <= l_two_part for each sample, with exact enumeration."""
    dec, prior = model.decoder, model.prior
    columns = ["sample", "l_gen_oracle", "l_f_gen", "l_two_part", "gap_f_gen", "gap_two_part", "ordering"]
    rows = []
    for i, (x, p) in enumerate(zip(np.atleast_2d(X), ng.outputs(model.encoder, np.atleast_2d(X)))):
        law = Bernoulli(p)
        l_gen = l_gen_exact(prior, dec, x)[0]
        l_f = expected_reconstruction_error(dec, law, x) + kl_to_prior(law, prior)
        l_two = two_part_codelength(prior, dec, law, x)
        ok = l_gen <= l_f + DISCRETE_TOL and l_f <= l_two + DISCRETE_TOL
        rows.append(
            {
                "sample": str(i),
                "l_gen_oracle": l_gen,
                "l_f_gen": l_f,
                "l_two_part": l_two,
                "gap_f_gen": l_f - l_gen,
                "gap_two_part": l_two - l_gen,
                "ordering": "OK" if ok else "VIOLATION",
            }
        )
    return _finish(columns, rows, {"l_f_gen": True, "l_two_part": True})


def continuous_bounds(
    model: Model,
    X,
    noise: NoiseSpec,
    rng: np.random.Generator,
    quadrature: QuadratureSpec | None = None,
    mc_samples: int = 1000,
) -> BoundsTable:
    """Oracle against the denoising, Taylor and contractive bounds.

    The denoising bound is a true upper bound (checked up to three Monte Carlo
    standard errors for non-affine decoders). The Taylor and contractive
    expressions are only guaranteed for affine decoders, and are only checked
    there.
    """
    dec, prior = model.decoder, model.prior
    affine = dec.net.is_affine
    columns = [
        "sample",
        "l_gen_oracle",
        "denoising",
        "taylor",
        "contractive_diag",
        "contractive_full",
        "gap_denoising",
        "gap_taylor",
        "gap_contractive_diag",
        "gap_contractive_full",
        "ordering",
    ]
    rows = []
    X = np.atleast_2d(X)
    # Gauss-Newton is the exact curvature of an affine decoder; differences would add ~1e-7 noise
    hessian = "gn_full" if affine else "exact_fd"
    for i, (x, m) in enumerate(zip(X, ng.outputs(model.encoder, X))):
        l_gen = l_gen_exact(prior, dec, x, quadrature)[0]
        cov = noise.resolve(prior, dec, m, x)
        law = GaussianFull(m, cov)
        if affine:
            e_rec, se = affine_expected_rec(dec, law, x), 0.0
        else:
            e_rec, se = expected_reconstruction_error(dec, law, x, mc_samples, rng, return_stderr=True)
        ent = -float(np.sum(np.log(np.diag(law.chol)))) - 0.5 * len(m) * (1 + LOG_2PI)
        den = e_rec + neg_expected_log_prior(prior, m, cov) + ent
        row = {
            "sample": str(i),
            "l_gen_oracle": l_gen,
            "denoising": den,
            "taylor": taylor_bound(prior, dec, m, cov, x, hessian=hessian),
            "contractive_diag": contractive_bound(prior, dec, m, x, "diag"),
            "contractive_full": contractive_bound(prior, dec, m, x, "full"),
        }
        for c in ("denoising", "taylor", "contractive_diag", "contractive_full"):
            row["gap_" + c] = row[c] - l_gen
        ok = den >= l_gen - CONTINUOUS_TOL - 3 * se
        if affine:
            ok = ok and all(row[c] >= l_gen - CONTINUOUS_TOL for c in ("taylor", "contractive_diag", "contractive_full"))
        row["ordering"] = "OK" if ok else "VIOLATION"
        rows.append(row)
    checked = {"denoising": True, "taylor": affine, "contractive_diag": affine, "contractive_full": affine}
    return _finish(columns, rows, checked)


def compare_bounds(model: Model, X, noise: NoiseSpec, rng, quadrature=None, mc_samples: int = 1000) -> BoundsTable:
    """Raises :class:`OracleInfeasible` rather than falling back to a weaker comparison."""
    if model.features == "bernoulli":
        return discrete_bounds(model, X)
    quadrature = quadrature or QuadratureSpec()
    if model.dim_y > quadrature.max_dim:
        raise OracleInfeasible(
            f"exact codelength needs quadrature over {model.dim_y} feature dimensions; at most {quadrature.max_dim} are supported"
        )
    return continuous_bounds(model, X, noise, rng, quadrature, mc_samples)
