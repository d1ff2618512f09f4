"""Command line entry point: ``adaptive-ope {collect,estimate,experiment,suite,diagnose}``.

Exit status is 0 on success, 1 on usage or configuration errors and 2 on
runtime failures.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .agents import collect
from .core import PolicyTable
from .envs import make_env
from .exceptions import ConfigError, OverlapError
from .harness import (
    ALL_ESTIMATORS,
    ExperimentConfig,
    bundled_datasets,
    evaluate_log,
    run_dataset_suite,
    run_experiment,
)
from .io import load_log, save_log, write_log

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common(p, config_required=False):
    p.add_argument("--config", required=config_required, help="flat key = value config file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="json")
    p.add_argument("--jobs", type=int, default=1, help="parallel replications")


def build_parser():
    parser = _Parser(prog="adaptive-ope", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("collect", help="run floored Thompson sampling and write a log file")
    _common(p)
    p.add_argument("--env", help="environment kind (overrides the config)")
    p.add_argument("--T", type=int, help="number of steps (overrides the config)")

    p = sub.add_parser("estimate", help="estimate a policy value from a log file")
    _common(p)
    p.add_argument("--log", required=True, help="log file written by collect")
    p.add_argument("--policy", default="arm:0",
                   help="arm:k, table:<csv>, best, fixed or contrast")
    p.add_argument("--baseline", help="second policy for a contrast (same syntax)")
    p.add_argument("--estimators", default=",".join(ALL_ESTIMATORS))
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--truth", type=float, help="reference value for the t-statistic")

    p = sub.add_parser("experiment", help="run a replication grid")
    _common(p, config_required=True)
    p.add_argument("--replications", type=int)

    p = sub.add_parser("suite", help="classification suite over a directory of CSV files")
    _common(p)
    p.add_argument("--data-dir", help="directory of CSV datasets (default: bundled)")
    p.add_argument("--replications", type=int)

    p = sub.add_parser("diagnose", help="exact and Monte Carlo oracle checks")
    _common(p)
    return parser


def _load_config(args, **defaults):
    if args.config:
        config = ExperimentConfig.from_file(args.config)
    else:
        config = ExperimentConfig(**defaults)
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    if getattr(args, "replications", None) is not None:
        config = dataclasses.replace(config, replications=args.replications)
    return config


def _emit(text, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _parse_policy(spec, log, env):
    if spec.startswith("arm:"):
        arm = int(spec[4:])
        if not 0 <= arm < log.n_arms:
            raise UsageError(f"arm {arm} out of range for {log.n_arms} arms")
        return PolicyTable.fixed_arm(arm, log.n_cells, log.n_arms)
    if spec.startswith("table:"):
        path = spec[6:]
        if not os.path.isfile(path):
            raise UsageError(f"policy table not found: {path}")
        name = os.path.splitext(os.path.basename(path))[0]
        return PolicyTable(np.loadtxt(path, delimiter=",", ndmin=2), name=name)
    if spec in ("best", "fixed", "contrast"):
        if env is None:
            raise UsageError(f"policy {spec!r} needs a synthetic environment recorded in the log")
        if spec == "best":
            return env.best_contextual_policy()
        if spec == "fixed":
            return env.best_fixed_arm_policy()
        return env.contrast_policies()
    raise UsageError(f"unknown policy spec {spec!r}")


def _env_from_log(log):
    desc = log.meta.get("env", {})
    kind = desc.get("kind")
    if kind in ("example1", "region_signal", "region_nosignal"):
        return make_env(kind, desc.get("noise_sd", 1.0))
    if kind == "discrete":
        return make_env(kind, desc.get("noise_sd", 1.0), probabilities=desc["probabilities"],
                        mean_table=desc["mean_table"])
    return None


def cmd_collect(args):
    config = _load_config(args)
    overrides = {}
    if args.env:
        overrides["env"] = args.env
    if args.T:
        overrides["T"] = args.T
        overrides["batch_size"] = min(config.batch_size, args.T)
    if overrides:
        config = dataclasses.replace(config, **overrides)
    env = config.build_env()
    kind, params = config.outcome_params(env)
    log = collect(env, config.agent_config(env), config.T, config.batch_size,
                  config.floor_schedule(env.n_arms), np.random.default_rng(config.master_seed),
                  outcome_model=kind, outcome_params=params)
    log.meta["seed"] = config.master_seed
    if args.out:
        save_log(log, args.out)
    else:
        write_log(log, sys.stdout)
    return EXIT_OK


def cmd_estimate(args):
    if not os.path.isfile(args.log):
        raise UsageError(f"log file not found: {args.log}")
    log = load_log(args.log)
    env = _env_from_log(log)
    policy = _parse_policy(args.policy, log, env)
    baseline = _parse_policy(args.baseline, log, env) if args.baseline else None
    if isinstance(policy, tuple):
        policy, baseline = policy
    names = [s.strip() for s in args.estimators.split(",") if s.strip()]
    unknown = [n for n in names if n not in ALL_ESTIMATORS]
    if unknown:
        raise UsageError(f"unknown estimators: {', '.join(unknown)}")
    kind = log.meta.get("outcome_model", "tabular")
    params = log.meta.get("outcome_params", {})
    records = []
    for est in evaluate_log(log, policy, baseline, names, kind, params):
        rec = est.to_record(args.level, args.truth)
        if est.metadata:
            rec["metadata"] = est.metadata
        records.append(rec)
    if args.format == "json":
        _emit(json.dumps(records, indent=1) + "\n", args.out)
    else:
        cols = ("estimator", "phi", "family", "policy", "point", "variance", "ci_lo", "ci_hi",
                "tstat")
        lines = [",".join(cols)]
        for r in records:
            lines.append(",".join("" if r[c] is None else str(r[c]) for c in cols))
        _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_experiment(args):
    config = _load_config(args)
    report = run_experiment(config, jobs=args.jobs)
    if args.out:
        report.write(args.out, args.format)
    elif args.format == "json":
        sys.stdout.write(report.to_json())
    else:
        sys.stdout.write(report.summary_csv())
    if report.n_failures:
        print(f"{report.n_failures} replication(s) failed and were excluded", file=sys.stderr)
    return EXIT_OK


# env and dataset are filled in per CSV by run_dataset_suite
SUITE_DEFAULTS = dict(T=1000, batch_size=100, num_draws=1000, replications=100)


def cmd_suite(args):
    if args.config:
        template = ExperimentConfig.from_file(args.config)
    else:
        template = ExperimentConfig(**SUITE_DEFAULTS)
    if args.seed is not None:
        template = dataclasses.replace(template, master_seed=args.seed)
    if args.replications is not None:
        template = dataclasses.replace(template, replications=args.replications)
    if args.data_dir:
        if not os.path.isdir(args.data_dir):
            raise UsageError(f"data directory not found: {args.data_dir}")
        paths = sorted(os.path.join(args.data_dir, f) for f in os.listdir(args.data_dir)
                       if f.endswith(".csv"))
    else:
        paths = bundled_datasets()
    report = run_dataset_suite(paths, template, jobs=args.jobs)
    if args.out:
        report.write(args.out, args.format)
    else:
        sys.stdout.write(report.to_json() if args.format == "json" else report.to_csv())
    return EXIT_OK


def cmd_diagnose(args):
    from .diagnostics import coverage_experiment, ks_distance, run_oracle_suite

    report = run_oracle_suite(seed=args.seed or 0)
    if args.config:
        config = _load_config(args)
        cov = coverage_experiment(config, jobs=args.jobs)
        report["coverage"] = {
            name: {"coverage": v["coverage"], "mean_radius": v["mean_radius"],
                   "ks_distance": ks_distance(v["tstat_samples"])}
            for name, v in cov.items()
        }
    _emit(json.dumps(report, indent=1) + "\n", args.out)
    return EXIT_OK if report["passed"] else EXIT_RUNTIME


COMMANDS = {"collect": cmd_collect, "estimate": cmd_estimate, "experiment": cmd_experiment,
            "suite": cmd_suite, "diagnose": cmd_diagnose}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if getattr(args, "jobs", 1) < 1:
        print("adaptive-ope: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"adaptive-ope: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OverlapError as exc:
        print(f"adaptive-ope: overlap error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"adaptive-ope: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
