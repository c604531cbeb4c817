"""Command-line interface.

Subcommands: ``simulate``, ``fit``, ``experiment uniform-breaks``,
``experiment beta-steps``, ``summarize``. Exit codes: 0 success, 2 config
error, 3 numerical abort.
"""

import argparse
import json
import os
import sys

import numpy as np

from .baseline import DiscreteParams, discrete_em
from .bench import (
    ExperimentConfig,
    read_records,
    run_beta_steps,
    run_uniform_breaks,
    summarize,
    write_records,
    write_summary,
)
from .em import EMOptions, default_init, run_em
from .errors import NumericalError
from .model import ModelParams, TimedObservations, require_valid
from .simulate import beta_steps, sample_trajectory, toggle_switch_dynamics, uniform_breaks

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    pass


def _model_from_doc(doc):
    if doc.get("preset") == "toggle":
        A, B = toggle_switch_dynamics()
        omega = float(doc.get("omega", 1.0))
        fields = {
            "A": omega * A,
            "Qc": B,
            "H": np.eye(2),
            "R": float(doc.get("obs_noise", 1.0)) * np.eye(2),
            "mu0": np.array([11.0 / 5.0, 341.0 / 5.0]),
            "P0": np.eye(2),
        }
    else:
        try:
            fields = {k: np.asarray(doc[k], dtype=float) for k in ("A", "Qc", "H", "R", "mu0", "P0")}
        except KeyError as exc:
            raise ConfigError(f"model config missing key {exc}") from None
    return require_valid(ModelParams(**fields))


def _times_from_doc(doc, seed):
    if isinstance(doc, list):
        return np.asarray(doc, dtype=float)
    kind = doc.get("kind")
    if kind == "uniform_breaks":
        taus = uniform_breaks(float(doc["T"]), int(doc["N"]), seed)
    elif kind == "beta_steps":
        taus = beta_steps(float(doc["gamma"]), int(doc["N"]), float(doc.get("scale", 0.5)), seed)
    elif kind == "regular":
        return float(doc.get("dt", 1.0)) * np.arange(1, int(doc["N"]) + 1)
    else:
        raise ConfigError(f"unknown times kind {kind!r}")
    return np.cumsum(taus)


def _cmd_simulate(args):
    with open(args.config, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    params = _model_from_doc(doc.get("model", {}))
    times = _times_from_doc(doc.get("times", {"kind": "regular", "N": 100}), args.seed)
    traj = sample_trajectory(params, times, args.seed)
    data = TimedObservations(times, traj.observed)
    header = "t," + ",".join(f"z{i + 1}" for i in range(data.m))
    columns = [times, traj.observed]
    if args.emit_latent:
        header += "," + ",".join(f"x{i + 1}" for i in range(traj.latent.shape[1]))
        columns.append(traj.latent)
    body = np.column_stack(columns)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in body:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return 0


def _cmd_fit(args):
    data = TimedObservations.from_csv(args.infile)
    doc = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    fixed = frozenset(doc.get("fixed", []))
    opts = EMOptions(
        tol=float(doc.get("tol", args.tol)),
        max_iters=int(doc.get("max_iters", args.max_iters)),
        refine_A=bool(doc.get("refine_A", not args.no_refine_a)),
        diagonal_Qc=bool(doc.get("diagonal_Qc", False)),
        fixed=fixed,
    )
    if args.engine == "continuous":
        if "model" in doc:
            params0 = _model_from_doc(doc["model"])
        else:
            A0, Qc0 = default_init(data, args.seed)
            n = A0.shape[0]
            params0 = ModelParams(
                A=A0, Qc=Qc0, H=np.eye(data.m, n), R=np.eye(data.m), mu0=np.zeros(n), P0=np.eye(n)
            )
        report = run_em(params0, data, opts)
        report.to_json(args.out)
        aborted = any("aborted" in w for w in report.warnings)
        return EXIT_NUMERICAL if aborted else 0
    # discrete engine: learn the one-step matrices, timestamps unused
    A0, Qc0 = default_init(data, args.seed)
    n = A0.shape[0]
    tau_bar = float(np.mean(data.taus))
    d0 = DiscreteParams(
        F=np.eye(n) + tau_bar * A0,
        Q=tau_bar * Qc0,
        H=np.eye(data.m, n),
        R=np.eye(data.m),
        mu0=np.zeros(n),
        P0=np.eye(n),
    )
    dparams, trace, info = discrete_em(d0, data.obs, opts)
    out = {
        "converged": info["converged"],
        "iterations": len(trace),
        "loglik_trace": [float(v) for v in trace],
        "warnings": info["warnings"],
        "final_params": {
            k: getattr(dparams, k).tolist() for k in ("F", "Q", "H", "R", "mu0", "P0")
        },
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
    return EXIT_NUMERICAL if any("aborted" in w for w in info["warnings"]) else 0


def _experiment_config(args, experiment):
    overrides = {}
    for name in ("seed", "replicates", "threads"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            declared = json.load(fh).get("experiment")
        if declared is not None and declared != experiment:
            raise ConfigError(
                f"config declares experiment {declared!r} but the subcommand ran {experiment!r}"
            )
        return ExperimentConfig.from_json(args.config, experiment=experiment, **overrides)
    return ExperimentConfig(experiment=experiment, **overrides)


def _cmd_experiment(args):
    experiment = args.kind.replace("-", "_")
    config = _experiment_config(args, experiment)
    runner = run_uniform_breaks if experiment == "uniform_breaks" else run_beta_steps
    records = runner(config)
    os.makedirs(args.out, exist_ok=True)
    write_records(records, os.path.join(args.out, "records.csv"))
    write_summary(summarize(records), os.path.join(args.out, "summary.csv"))
    if records and all(r.failures for r in records):
        print("every replicate failed", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


def _cmd_summarize(args):
    records = read_records(args.infile)
    write_summary(summarize(records), args.out)
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(prog="cdlds")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample a trajectory to CSV")
    p.add_argument("--config", required=True, help="JSON model/time-grid description")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-latent", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="run EM on a CSV observation series")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--engine", choices=("continuous", "discrete"), default="continuous")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--no-refine-a", action="store_true")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("experiment", help="run a replicate sweep")
    p.add_argument("kind", choices=("uniform-breaks", "beta-steps"))
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("summarize", help="box statistics from records.csv")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_summarize)
    return parser


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
