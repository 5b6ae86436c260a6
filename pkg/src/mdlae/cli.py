"""Command-line entry point: ``mdlae {synth,train,compare-bounds,grad-check}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import netgraph as ng
from . import synth
from .bounds import compare_bounds
from .codelength import OracleInfeasible
from .experiment import ConfigError, Experiment
from .gradcheck import TOLERANCE, grad_check
from .train import TrainingDiverged, run, substream


def _write(path: str, text: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def cmd_synth(args) -> int:
    if args.spec:
        if args.seed is None:
            raise ConfigError("seed", "missing required key (pass --seed)")
        spec, n, seed = args.spec, args.n or 1000, args.seed
    elif args.config:
        exp = Experiment.from_file(args.config, args.seed)
        if "synth" not in exp.values:
            raise ConfigError("synth", "missing required key for the synth command")
        spec, n, seed = exp.values["synth"], args.n or exp.get("n_samples", int), exp.seed
    else:
        raise ConfigError("synth", "give a generator spec or --config")
    ds = synth.generate(spec, n, substream(seed, "data"))
    csv_path = os.path.join(args.out, "data.csv")
    os.makedirs(args.out, exist_ok=True)
    ds.write(csv_path, os.path.join(args.out, "data.json"))
    print(f"wrote {len(ds.data)} samples to {csv_path}")
    return 0


def cmd_train(args) -> int:
    exp = Experiment.from_file(args.config, args.seed)
    X = exp.data()
    model = exp.model(X)
    result = run(exp.train_config(), X, model)
    report = {
        "config": exp.normalized(),
        "steps": result.steps,
        **result.report.to_dict(),
    }
    report_path = os.path.join(args.out, "report.json")
    if exp.values.get("report") and args.out_default:
        report_path = os.path.join(exp.base_dir, exp.values["report"])
    _write(report_path, json.dumps(report, indent=2) + "\n")
    _write(os.path.join(os.path.dirname(report_path), "log.tsv"), result.log_tsv())
    _write(os.path.join(os.path.dirname(report_path), "encoder.net"), ng.dumps(result.model.encoder))
    _write(os.path.join(os.path.dirname(report_path), "decoder.net"), ng.dumps(result.model.decoder.net))
    mean = result.report.means()
    print(f"trained {result.steps} steps; report in {report_path}")
    for key in ("l_rec", "l_f_gen", "l_gen_oracle", "bound_gap"):
        if mean.get(key) is not None:
            print(f"  {key:>13} {mean[key]:.6f} nats/sample")
    return 0


def cmd_compare_bounds(args) -> int:
    exp = Experiment.from_file(args.config, args.seed)
    X = exp.data()
    model = exp.model(X)
    cfg = exp.train_config()
    if cfg.epochs > 0:
        model = run(cfg, X, model).model
    noise = exp.noise_spec()
    table = compare_bounds(model, X, noise, substream(exp.seed, "report"), exp.quadrature(), cfg.report_mc_samples)
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "bounds.csv"), table.to_csv())
    sys.stdout.write(table.to_text())
    unchecked = [c for c, on in table.checked.items() if not on]
    if unchecked:
        print(f"ordering not checked for {', '.join(unchecked)} (not guaranteed bounds for this decoder)")
    print("ordering: " + ("OK" if table.all_ok else "VIOLATION"))
    return 0 if table.all_ok else 1


def cmd_grad_check(args) -> int:
    exp = Experiment.from_file(args.config, args.seed)
    X = exp.data()[: exp.get("grad_check_samples", int)]
    model = exp.model(X)
    results = grad_check(model, X, exp.seed, corrupt=args.corrupt)
    failed = []
    for r in results:
        if r.skipped:
            print(f"{r.name:<24} skipped ({r.skipped})")
            continue
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name:<24} {r.worst_rel_err:.3e}  {status}")
        if not r.passed:
            failed.append(r.name)
    if failed:
        print(f"gradient check failed above {TOLERANCE:g}: {', '.join(failed)}")
        return 1
    print(f"all gradients within {TOLERANCE:g}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "compare-bounds": cmd_compare_bounds,
    "grad-check": cmd_grad_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdlae", description="Codelength bounds and training for auto-encoders.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "synth", help="experiment config (key = value lines)")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output directory (default: current directory)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "synth":
            p.add_argument("spec", nargs="?", help='generator, e.g. "linear-gaussian(2, 4, 0.1)"')
            p.add_argument("--n", type=int, help="number of samples")
        if name == "grad-check":
            p.add_argument("--corrupt", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    args.out_default = args.out is None
    args.out = args.out or "."
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OracleInfeasible as exc:
        print(f"error: oracle infeasible: {exc}", file=sys.stderr)
        return 3
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 4
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

