"""Synthetic datasets whose generative parameters are known exactly."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

import numpy as np

GENERATORS = ("linear-gaussian", "discrete-mixture", "two-scale")


@dataclass(frozen=True)
class Dataset:
    data: np.ndarray  # n x d_x
    truth: dict  # ground-truth parameters, JSON-serializable

    def write(self, csv_path, sidecar_path=None):
        np.savetxt(csv_path, self.data, delimiter=",", fmt="%.17g")
        if sidecar_path is not None:
            with open(sidecar_path, "w") as fh:
                json.dump(self.truth, fh, indent=2, sort_keys=True)
                fh.write("\n")


def linear_gaussian(d_y: int, d_x: int, noise: float, n: int, rng) -> Dataset:
    """x = W y + noise * eps with y, eps standard normal."""
    if d_y < 1 or d_x < 1 or noise < 0:
        raise ValueError("linear-gaussian needs d_y, d_x >= 1 and noise >= 0")
    W = rng.standard_normal((d_x, d_y))
    y = rng.standard_normal((n, d_y))
    x = y @ W.T + noise * rng.standard_normal((n, d_x))
    return Dataset(x, {"generator": "linear-gaussian", "W": W.tolist(), "noise": noise, "prior_var": 1.0})


def discrete_mixture(d_y: int, d_x: int, n: int, rng, noise: float = 0.1, scale: float = 2.0) -> Dataset:
    """Uniform binary codes y mapped to cluster centers W y + b, plus isotropic noise.

    W has orthogonal columns of length ``scale`` (when d_x >= d_y), so the
    posterior over the code given x is a product of Bernoullis.
    """
    if not 1 <= d_y <= 6:
        raise ValueError("discrete-mixture needs 1 <= d_y <= 6")
    if d_x < 1 or noise < 0:
        raise ValueError("discrete-mixture needs d_x >= 1 and noise >= 0")
    W = rng.standard_normal((d_x, d_y))
    if d_x >= d_y:
        W = scale * np.linalg.qr(W)[0]
    b = rng.standard_normal(d_x)
    y = rng.integers(0, 2, size=(n, d_y)).astype(float)
    x = y @ W.T + b + noise * rng.standard_normal((n, d_x))
    return Dataset(
        x,
        {"generator": "discrete-mixture", "W": W.tolist(), "b": b.tolist(), "noise": noise, "prior_q": [0.5] * d_y},
    )


def two_scale(n: int, rng, variances=(1.0, 1e-4)) -> Dataset:
    """Independent centred Gaussian coordinates on very different scales."""
    var = np.asarray(variances, dtype=float)
    x = rng.standard_normal((n, len(var))) * np.sqrt(var)
    return Dataset(x, {"generator": "two-scale", "variances": var.tolist()})


_SPEC = re.compile(r"^\s*([a-z-]+)\s*(?:\((.*)\))?\s*$")


def parse_spec(text: str) -> tuple[str, list[float]]:
    """``"linear-gaussian(2, 4, 0.1)"`` -> ``("linear-gaussian", [2.0, 4.0, 0.1])``."""
    m = _SPEC.match(text)
    if not m or m.group(1) not in GENERATORS:
        raise ValueError(f"unknown synthetic spec {text!r}; expected one of {', '.join(GENERATORS)}")
    args = [float(a) for a in m.group(2).split(",")] if m.group(2) and m.group(2).strip() else []
    return m.group(1), args


def _int(v: float, name: str) -> int:
    if v != int(v):
        raise ValueError(f"{name} must be an integer, got {v}")
    return int(v)


def generate(spec: str, n: int, rng) -> Dataset:
    name, args = parse_spec(spec)
    if name == "linear-gaussian":
        if len(args) != 3:
            raise ValueError("linear-gaussian takes (d_y, d_x, noise)")
        return linear_gaussian(_int(args[0], "d_y"), _int(args[1], "d_x"), args[2], n, rng)
    if name == "discrete-mixture":
        if len(args) not in (2, 3):
            raise ValueError("discrete-mixture takes (d_y, d_x) or (d_y, d_x, noise)")
        return discrete_mixture(_int(args[0], "d_y"), _int(args[1], "d_x"), n, rng, *args[2:])
    if args and len(args) != 2:
        raise ValueError("two-scale takes no arguments or (var_1, var_2)")
    return two_scale(n, rng, args or (1.0, 1e-4))
