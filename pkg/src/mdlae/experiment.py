"""Flat ``key = value`` experiment configs and the objects they describe."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import netgraph as ng
from . import synth
from .codelength import Decoder, QuadratureSpec
from .noise import NoiseSpec
from .outvar import OutputModel
from .priors import BernoulliPrior, GaussianPrior, UniformBinaryPrior
from .train import Model, Objective, TrainConfig, substream

REQUIRED = object()

# key -> default (REQUIRED, None for optional, or the default text)
KEYS = {
    "data": None,
    "synth": None,
    "n_samples": "1000",
    "encoder": REQUIRED,
    "decoder": REQUIRED,
    "encoder_hidden": "tanh",
    "encoder_output": None,
    "decoder_hidden": "tanh",
    "decoder_output": "identity",
    "init_output_bias": "data_mean",
    "features": "gaussian",
    "prior": None,
    "objective": REQUIRED,
    "noise": "fixed",
    "hessian": "gn_diag",
    "noise_cov": "1.0",
    "feature_log_var": "-2.0",
    "output_sigma": "fixed:1.0",
    "epsilon": "0",
    "seed": REQUIRED,
    "learning_rate": "0.01",
    "epochs": "10",
    "batch_size": "16",
    "momentum": "0",
    "max_steps": None,
    "prior_refit": "0",
    "sigma_refit": "1",
    "mc_samples": "16",
    "report_mc_samples": "1000",
    "oracle": "auto",
    "quadrature_points": "2048",
    "quadrature_half_width": "8",
    "grad_check_samples": "3",
    "report": None,
}

OBJECTIVE_NAMES = ("reconstruction", "f_gen", "denoising", "logdet_direct", "contractive_diag", "contractive_full")


class ConfigError(ValueError):
    """Bad experiment config; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


def parse_config(text: str) -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not of the form key = value")
        key, value = (t.strip() for t in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(key, "unknown key")
        if key in raw:
            raise ConfigError(key, f"repeated on line {lineno}")
        raw[key] = value
    return raw


def _typed(key: str, value: str, kind):
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(key, f"cannot read {value!r} as {kind.__name__}") from None


def _floats(key: str, value: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in value.split(",")])
    except ValueError:
        raise ConfigError(key, f"expected a number or comma-separated numbers, got {value!r}") from None


def _shape(key: str, value: str) -> list[int]:
    try:
        sizes = [int(t) for t in value.split("-")]
    except ValueError:
        sizes = []
    if len(sizes) < 2 or min(sizes) < 1:
        raise ConfigError(key, f"expected layer sizes like 8-4-2, got {value!r}")
    return sizes


@dataclass
class Experiment:
    """A validated config: everything needed to build data, model and training settings."""

    values: dict[str, str]
    base_dir: str = "."

    @classmethod
    def from_text(cls, text: str, base_dir: str = ".", seed: int | None = None) -> "Experiment":
        raw = parse_config(text)
        if seed is not None:
            raw["seed"] = str(seed)
        return cls.from_dict(raw, base_dir)

    @classmethod
    def from_file(cls, path: str, seed: int | None = None) -> "Experiment":
        with open(path) as fh:
            return cls.from_text(fh.read(), os.path.dirname(os.path.abspath(path)), seed)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: str = ".") -> "Experiment":
        for key in raw:
            if key not in KEYS:
                raise ConfigError(key, "unknown key")
        values = {k: str(v) for k, v in raw.items()}
        for key, default in KEYS.items():
            if key not in values:
                if default is REQUIRED:
                    raise ConfigError(key, "missing required key")
                if default is not None:
                    values[key] = default
        exp = cls(values, base_dir)
        exp._validate()
        return exp

    def get(self, key: str, kind=str):
        v = self.values.get(key)
        return None if v is None else _typed(key, v, kind)

    def _validate(self):
        if ("data" in self.values) == ("synth" in self.values):
            raise ConfigError("data", "give exactly one of 'data' (CSV path) or 'synth' (generator spec)")
        if "synth" in self.values:
            try:
                synth.parse_spec(self.values["synth"])
            except ValueError as exc:
                raise ConfigError("synth", str(exc)) from None
        seed = self.get("seed", int)
        if seed < 0:
            raise ConfigError("seed", "must be non-negative")
        enc, dec = self.encoder_sizes, self.decoder_sizes
        if enc[-1] != dec[0]:
            raise ConfigError("decoder", f"input size {dec[0]} differs from the encoder output size {enc[-1]}")
        if enc[0] != dec[-1]:
            raise ConfigError("decoder", f"output size {dec[-1]} differs from the encoder input size {enc[0]}")
        if self.values["objective"] not in OBJECTIVE_NAMES:
            raise ConfigError("objective", f"expected one of {', '.join(OBJECTIVE_NAMES)}")
        if self.values["features"] not in ("gaussian", "bernoulli"):
            raise ConfigError("features", "expected gaussian or bernoulli")
        if self.values["init_output_bias"] not in ("zero", "data_mean"):
            raise ConfigError("init_output_bias", "expected zero or data_mean")
        for key in ("encoder_hidden", "decoder_hidden", "decoder_output"):
            if self.values[key] not in ng.ACTIVATIONS:
                raise ConfigError(key, f"expected one of {', '.join(ng.ACTIVATIONS)}")
        if self.values["objective"].startswith("contractive_") and len(dec) > 2:
            raise ConfigError("objective", "contractive objectives need a single-layer decoder; use logdet_direct")
        if self.values["objective"] == "logdet_direct" and self.values["hessian"] != "gn_diag":
            raise ConfigError("hessian", "the logdet_direct objective uses the layer-wise diagonal Gauss-Newton curvature (gn_diag)")
        # build once so every value-level error surfaces here
        self.objective()
        self.prior()
        self.output_model()
        self.train_config()

    # -- pieces ----------------------------------------------------------

    @property
    def seed(self) -> int:
        return self.get("seed", int)

    @property
    def encoder_sizes(self) -> list[int]:
        return _shape("encoder", self.values["encoder"])

    @property
    def decoder_sizes(self) -> list[int]:
        return _shape("decoder", self.values["decoder"])

    @property
    def dim_y(self) -> int:
        return self.encoder_sizes[-1]

    def objective(self) -> Objective:
        name = self.values["objective"]
        mc = self.get("mc_samples", int)
        try:
            if name.startswith("contractive_"):
                return Objective("contractive", variant=name.split("_", 1)[1], mc_samples=mc)
            noise = None
            if name == "denoising":
                noise = self.noise_spec()
            return Objective(name, noise=noise, mc_samples=mc)
        except ValueError as exc:
            raise ConfigError("mc_samples" if "mc_samples" in str(exc) else "objective", str(exc)) from None

    def noise_spec(self) -> NoiseSpec:
        cov = _floats("noise_cov", self.values["noise_cov"])
        if np.any(cov <= 0):
            raise ConfigError("noise_cov", "noise variances must be positive")
        try:
            return NoiseSpec(self.values["noise"], cov[0] if len(cov) == 1 else cov, self.values["hessian"])
        except ValueError as exc:
            raise ConfigError("noise", str(exc)) from None

    def prior(self):
        d = self.dim_y
        spec = self.values.get("prior") or ("uniform" if self.values["features"] == "bernoulli" else "gaussian:1")
        family, _, arg = spec.partition(":")
        try:
            if family == "uniform" and not arg:
                prior = UniformBinaryPrior(d)
            elif family in ("gaussian", "bernoulli") and arg:
                v = _floats("prior", arg)
                v = np.full(d, v[0]) if len(v) == 1 else v
                if len(v) != d:
                    raise ConfigError("prior", f"needs 1 or {d} values, got {len(v)}")
                prior = GaussianPrior(v) if family == "gaussian" else BernoulliPrior(v)
            else:
                raise ConfigError("prior", f"expected gaussian:<var>, bernoulli:<q> or uniform, got {spec!r}")
        except (ValueError, TypeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError("prior", str(exc)) from None
        if (self.values["features"] == "bernoulli") != (family in ("uniform", "bernoulli")):
            raise ConfigError("prior", f"a {family} prior does not match {self.values['features']} features")
        return prior

    def output_model(self) -> OutputModel:
        spec = self.values["output_sigma"]
        mode, _, arg = spec.partition(":")
        eps = self.get("epsilon", float)
        if mode not in ("fixed", "learned") or (mode == "fixed" and not arg):
            raise ConfigError("output_sigma", f"expected fixed:<v> or learned[:<initial v>], got {spec!r}")
        sigma = _floats("output_sigma", arg) if arg else np.ones(1)
        d = self.decoder_sizes[-1]
        sigma = np.full(d, sigma[0]) if len(sigma) == 1 else sigma
        if len(sigma) != d:
            raise ConfigError("output_sigma", f"needs 1 or {d} values")
        try:
            return OutputModel(sigma, mode, eps)
        except ValueError as exc:
            raise ConfigError("epsilon" if "epsilon" in str(exc) else "output_sigma", str(exc)) from None

    def quadrature(self) -> QuadratureSpec:
        try:
            return QuadratureSpec(
                half_width=self.get("quadrature_half_width", float), points=self.get("quadrature_points", int)
            )
        except ValueError as exc:
            raise ConfigError("quadrature_points", str(exc)) from None

    def train_config(self) -> TrainConfig:
        checks = {
            "learning_rate": float,
            "epochs": int,
            "batch_size": int,
            "momentum": float,
            "prior_refit": int,
            "sigma_refit": int,
            "report_mc_samples": int,
            "n_samples": int,
            "grad_check_samples": int,
        }
        vals = {k: self.get(k, t) for k, t in checks.items()}
        for k in ("batch_size", "report_mc_samples", "n_samples", "grad_check_samples", "mc_samples"):
            v = vals.get(k, self.get(k, int))
            if v < 1:
                raise ConfigError(k, "must be positive")
        for k in ("learning_rate", "epochs", "prior_refit", "sigma_refit"):
            if vals[k] < 0:
                raise ConfigError(k, "must be non-negative")
        if not 0 <= vals["momentum"] < 1:
            raise ConfigError("momentum", "must lie in [0, 1)")
        if self.values["oracle"] not in ("auto", "on", "off"):
            raise ConfigError("oracle", "expected auto, on or off")
        max_steps = self.get("max_steps", int)
        if max_steps is not None and max_steps < 0:
            raise ConfigError("max_steps", "must be non-negative")
        return TrainConfig(
            objective=self.objective(),
            seed=self.seed,
            learning_rate=vals["learning_rate"],
            epochs=vals["epochs"],
            batch_size=vals["batch_size"],
            momentum=vals["momentum"],
            prior_refit=vals["prior_refit"],
            sigma_refit=vals["sigma_refit"],
            report_mc_samples=vals["report_mc_samples"],
            oracle=self.values["oracle"],
            quadrature=self.quadrature(),
            max_steps=max_steps,
        )

    # -- data and model --------------------------------------------------

    def dataset(self) -> synth.Dataset:
        if "synth" in self.values:
            return synth.generate(self.values["synth"], self.get("n_samples", int), substream(self.seed, "data"))
        path = os.path.join(self.base_dir, self.values["data"])
        try:
            data = np.loadtxt(path, delimiter=",", ndmin=2)
        except OSError as exc:
            raise ConfigError("data", f"cannot read {path}: {exc}") from None
        except ValueError as exc:
            raise ConfigError("data", f"{path} is not a headerless numeric CSV: {exc}") from None
        return synth.Dataset(data, {"source": path})

    def data(self) -> np.ndarray:
        X = self.dataset().data
        if X.shape[1] != self.encoder_sizes[0]:
            raise ConfigError("encoder", f"input size {self.encoder_sizes[0]} but the data has {X.shape[1]} columns")
        return X

    def model(self, X: np.ndarray) -> Model:
        rng = substream(self.seed, "init")
        bern = self.values["features"] == "bernoulli"
        enc_out = self.values.get("encoder_output") or ("sigmoid" if bern else "identity")
        if enc_out not in ng.ACTIVATIONS:
            raise ConfigError("encoder_output", f"expected one of {', '.join(ng.ACTIVATIONS)}")
        if bern and enc_out != "sigmoid":
            raise ConfigError("encoder_output", "Bernoulli features need sigmoid encoder outputs")
        enc = ng.layered(self.encoder_sizes, self.values["encoder_hidden"], enc_out, rng)
        dec_net = ng.layered(self.decoder_sizes, self.values["decoder_hidden"], self.values["decoder_output"], rng)
        if self.values["init_output_bias"] == "data_mean" and self.values["decoder_output"] == "identity":
            dec_net = ng.with_output_bias(dec_net, X.mean(axis=0))
        log_var = None
        if not bern and self.values["objective"] == "f_gen":
            log_var = np.full(self.dim_y, self.get("feature_log_var", float))
        return Model(enc, Decoder(dec_net, self.output_model()), self.prior(), self.values["features"], log_var)

    def normalized(self) -> dict[str, str]:
        return dict(sorted(self.values.items()))
