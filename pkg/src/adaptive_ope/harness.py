"""Replication runner, metric aggregation and report serialization.

Config files are flat ``key = value`` text (``#`` starts a comment)::

    env = region_signal
    T = 2000
    batch_size = 100
    estimators = DR, NC-MinVar, C-MinVar
    target = contrast
    replications = 500
    master_seed = 1

See ``ExperimentConfig`` for every key and its default.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from .agents import AgentConfig, FloorSchedule, collect
from .core import PolicyTable
from .envs import make_env
from .estimators import (
    confidence_interval,
    estimate_dm,
    estimate_ipw,
    estimate_weighted,
    WeightScheme,
)
from .exceptions import ConfigError, DatasetError, NoAnalyticValueError
from .outcome_models import refit_prefix

REPORT_VERSION = 1
ALL_ESTIMATORS = ("DM", "IPW", "DR", "NC-StableVar", "NC-MinVar", "C-StableVar", "C-MinVar")
ROW_COLUMNS = ("replication", "checkpoint", "estimator", "point", "variance", "ci_lo", "ci_hi",
               "tstat", "covered")
SUMMARY_COLUMNS = ("estimator", "checkpoint", "n", "truth", "mean", "bias", "se", "rmse",
                   "coverage", "mean_radius")

# environment kind -> (floor coefficient, floor exponent); None means 1/K
DEFAULT_FLOORS = {
    "example1": (None, 0.8),
    "discrete": (None, 0.8),
    "region_signal": (0.25, 0.8),
    "region_nosignal": (0.25, 0.8),
    "classification": (None, 0.5),
}
FLOOR_PRESETS = {"fast": FloorSchedule.fast, "slow": FloorSchedule.slow}


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment grid.

    Attributes
    ----------
    env : {'example1', 'discrete', 'region_signal', 'region_nosignal', 'classification'}
    probabilities, mean_table
        Context law and per-context mean rewards of a 'discrete' environment;
        in files ``mean_table = 0.5, 0; 0, 1`` separates rows with ';'.
    dataset, label_column, standardize
        CSV source for the classification environment.
    agent : {'tabular', 'linear'} or None
        Thompson sampling model; None picks the environment default.
    floor : {'fast', 'slow'} or None
        Named floor preset; ``floor_coefficient`` / ``floor_exponent`` override
        the environment default (coefficient None means 1/K).
    target : str
        'contrast' (best contextual minus best fixed arm), 'best', 'fixed'
        or 'arm:k'.
    checkpoints : tuple of int
        Prefix lengths to evaluate; empty means (T,).
    """

    env: str = "example1"
    noise_sd: float = 1.0
    probabilities: tuple = ()
    mean_table: tuple = ()
    dataset: Optional[str] = None
    label_column: str = "label"
    standardize: bool = True
    agent: Optional[str] = None
    num_draws: int = 10_000
    prior_mean: float = 0.0
    prior_count: float = 1.0
    noise_var: float = 1.0
    ridge: float = 1.0
    T: int = 1000
    batch_size: int = 100
    floor: Optional[str] = None
    floor_coefficient: Optional[float] = None
    floor_exponent: Optional[float] = None
    outcome_model: Optional[str] = None
    outcome_alpha: float = 1.0
    estimators: tuple = ALL_ESTIMATORS
    target: str = "contrast"
    replications: int = 100
    master_seed: int = 0
    level: float = 0.95
    checkpoints: tuple = ()

    def __post_init__(self):
        if self.env not in DEFAULT_FLOORS:
            raise ConfigError(f"unknown env {self.env!r}")
        if self.env == "discrete":
            if not self.probabilities or len(self.mean_table) != len(self.probabilities):
                raise ConfigError("env = discrete needs probabilities and one mean_table row each")
            if len({len(r) for r in self.mean_table}) != 1:
                raise ConfigError("mean_table rows must have equal length")
        if self.env == "classification" and not self.dataset:
            raise ConfigError("env = classification needs a dataset path")
        if self.T < 1 or not 1 <= self.batch_size <= self.T:
            raise ConfigError("need T >= batch_size >= 1")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        unknown = [e for e in self.estimators if e not in ALL_ESTIMATORS]
        if unknown or not self.estimators:
            raise ConfigError(f"unknown or empty estimator list: {unknown}")
        cps = list(self.checkpoints)
        if cps != sorted(cps) or len(set(cps)) != len(cps):
            raise ConfigError("checkpoints must be strictly increasing")
        if cps and (cps[0] < 1 or cps[-1] > self.T):
            raise ConfigError("checkpoints must lie in 1..T")
        if self.floor is not None and self.floor not in FLOOR_PRESETS:
            raise ConfigError(f"unknown floor preset {self.floor!r}")
        _parse_target(self.target)

    @property
    def checkpoint_list(self):
        return tuple(self.checkpoints) or (self.T,)

    def build_env(self):
        if self.env == "classification":
            return make_env("classification", self.noise_sd, dataset=self.dataset,
                            label_column=self.label_column, standardize=self.standardize)
        if self.env == "discrete":
            try:
                return make_env("discrete", self.noise_sd, probabilities=self.probabilities,
                                mean_table=[list(r) for r in self.mean_table])
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        return make_env(self.env, self.noise_sd)

    def floor_schedule(self, n_arms):
        if self.floor is not None:
            base = FLOOR_PRESETS[self.floor]()
            coef, exp = base.coefficient, base.exponent
        else:
            coef, exp = DEFAULT_FLOORS[self.env]
            coef = 1.0 / n_arms if coef is None else coef
        if self.floor_coefficient is not None:
            coef = self.floor_coefficient
        if self.floor_exponent is not None:
            exp = self.floor_exponent
        return FloorSchedule(coef, exp)

    def agent_config(self, env):
        return AgentConfig(kind=self.agent or env.default_agent, num_draws=self.num_draws,
                           prior_mean=self.prior_mean, prior_count=self.prior_count,
                           noise_var=self.noise_var, ridge=self.ridge)

    def outcome_params(self, env):
        kind = self.outcome_model or env.default_outcome_model
        return kind, ({"alpha": self.outcome_alpha} if kind == "ridge" else {})

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["estimators"] = list(self.estimators)
        d["checkpoints"] = list(self.checkpoints)
        d["probabilities"] = list(self.probabilities)
        d["mean_table"] = [list(r) for r in self.mean_table]
        return d

    @classmethod
    def from_mapping(cls, mapping):
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _convert(key, raw, fields[key].default)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path):
        if not os.path.isfile(path):
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        parser.optionxform = str
        with open(path) as fh:
            text = fh.read()
        try:
            parser.read_string("[experiment]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        config = cls.from_mapping(dict(parser["experiment"]))
        if config.dataset and not os.path.isabs(config.dataset):
            resolved = os.path.join(os.path.dirname(os.path.abspath(path)), config.dataset)
            config = dataclasses.replace(config, dataset=resolved)
        return config


def _convert(key, raw, default):
    raw = raw.strip()
    try:
        if key in ("estimators",):
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        if key == "probabilities":
            return tuple(float(s) for s in raw.split(",") if s.strip())
        if key == "mean_table":
            return tuple(tuple(float(v) for v in row.split(",") if v.strip())
                         for row in raw.split(";") if row.strip())
        if key == "checkpoints":
            return tuple(int(s) for s in raw.replace(",", " ").split())
        if raw.lower() in ("", "none") and key in ("dataset", "agent", "floor", "floor_coefficient",
                                                   "floor_exponent", "outcome_model"):
            return None
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or key in ("floor_coefficient", "floor_exponent"):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def _parse_target(target):
    if target in ("contrast", "best", "fixed"):
        return target, None
    kind, _, arm = target.partition(":")
    if kind == "arm" and arm.isdigit():
        return "arm", int(arm)
    raise ConfigError(f"unknown target {target!r}")


def resolve_target(env, target):
    """(policy, baseline, truth) for a target name; baseline is None for single policies."""
    kind, arm = _parse_target(target)
    if kind == "contrast":
        policy, baseline = env.contrast_policies()
    elif kind == "best":
        policy, baseline = env.best_contextual_policy(), None
    elif kind == "fixed":
        policy, baseline = env.best_fixed_arm_policy(), None
    else:
        if arm >= env.n_arms:
            raise ConfigError(f"target arm {arm} out of range for {env.n_arms} arms")
        policy, baseline = PolicyTable.fixed_arm(arm, env.n_cells, env.n_arms), None
    try:
        truth = env.policy_value(policy)
        if baseline is not None:
            truth -= env.policy_value(baseline)
    except NoAnalyticValueError:
        truth = None
    return policy, baseline, truth


def evaluate_log(log, policy, baseline, estimators, outcome_kind="tabular", outcome_params=None):
    """Every requested estimate on one log, in ``estimators`` order."""
    out = []
    for name in estimators:
        if name == "DM":
            model = refit_prefix(outcome_kind, log, log.T + 1, **(outcome_params or {}))
            out.append(estimate_dm(log, policy, model, baseline))
        elif name == "IPW":
            out.append(estimate_ipw(log, policy, baseline))
        else:
            out.append(estimate_weighted(log, policy, WeightScheme.from_name(name), baseline))
    return out


def replication_rng(master_seed, index):
    """Independent stream for replication ``index``; unaffected by scheduling."""
    return np.random.default_rng([master_seed, index])


def _run_replication(config, env, index):
    try:
        rng = replication_rng(config.master_seed, index)
        policy, baseline, truth = resolve_target(env, config.target)
        kind, params = config.outcome_params(env)
        log = collect(env, config.agent_config(env), config.T, config.batch_size,
                      config.floor_schedule(env.n_arms), rng, outcome_model=kind,
                      outcome_params=params)
        rows = []
        for n in config.checkpoint_list:
            prefix = log.prefix(n)
            for est in evaluate_log(prefix, policy, baseline, config.estimators, kind, params):
                ci = confidence_interval(est, config.level, truth)
                rows.append({
                    "replication": index,
                    "checkpoint": n,
                    "estimator": est.estimator,
                    "point": est.point,
                    "variance": est.variance,
                    "ci_lo": ci.lo,
                    "ci_hi": ci.hi,
                    "tstat": ci.tstat,
                    "covered": None if truth is None else bool(ci.lo <= truth <= ci.hi),
                })
        return rows, None
    except Exception as exc:  # recorded, never fatal to the experiment
        return [], {"replication": index, "error": f"{type(exc).__name__}: {exc}"}


def summarize(rows, truth, estimators, checkpoints):
    """Aggregate metrics per (estimator, checkpoint), in the given order.

    bias = mean - truth, se = population standard deviation of the points,
    rmse = sqrt(mean((point - truth)^2)); so rmse^2 = bias^2 + se^2.
    """
    summary = []
    for n in checkpoints:
        for name in estimators:
            sel = [r for r in rows if r["checkpoint"] == n and r["estimator"] == name]
            if not sel:
                continue
            points = np.array([r["point"] for r in sel], dtype=float)
            radius = np.array([(r["ci_hi"] - r["ci_lo"]) / 2 for r in sel], dtype=float)
            mean = float(np.mean(points))
            row = {"estimator": name, "checkpoint": n, "n": len(sel), "truth": truth,
                   "mean": mean, "se": float(np.sqrt(np.mean((points - mean) ** 2))),
                   "mean_radius": float(np.mean(radius))}
            if truth is None:
                row.update(bias=None, rmse=None, coverage=None)
            else:
                row.update(bias=mean - truth,
                           rmse=float(np.sqrt(np.mean((points - truth) ** 2))),
                           coverage=float(np.mean([r["covered"] for r in sel])))
            summary.append({k: row[k] for k in SUMMARY_COLUMNS})
    return summary


@dataclass
class ReplicationReport:
    config: dict
    truth: Optional[float]
    rows: list
    summary: list
    failures: list = field(default_factory=list)

    @property
    def n_failures(self):
        return len(self.failures)

    def summary_for(self, estimator, checkpoint=None):
        cp = checkpoint if checkpoint is not None else max(r["checkpoint"] for r in self.summary)
        for row in self.summary:
            if row["estimator"] == estimator and row["checkpoint"] == cp:
                return row
        raise KeyError((estimator, cp))

    def points(self, estimator, checkpoint=None):
        """Point estimates ordered by replication index."""
        cp = checkpoint if checkpoint is not None else max(r["checkpoint"] for r in self.rows)
        sel = [r for r in self.rows if r["estimator"] == estimator and r["checkpoint"] == cp]
        return np.array([r["point"] for r in sorted(sel, key=lambda r: r["replication"])])

    def to_dict(self):
        return {"version": REPORT_VERSION, "config": self.config, "truth": self.truth,
                "n_failures": self.n_failures, "failures": self.failures,
                "summary": self.summary, "rows": self.rows}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def rows_csv(self):
        return _table_csv(self.rows, ROW_COLUMNS)

    def summary_csv(self):
        return _table_csv(self.summary, SUMMARY_COLUMNS)

    def write(self, path, fmt="json"):
        """Write the report; CSV output puts the summary next to the rows file."""
        if fmt == "json":
            with open(path, "w") as fh:
                fh.write(self.to_json())
            return [path]
        if fmt != "csv":
            raise ValueError(f"unknown format {fmt!r}")
        stem, _ = os.path.splitext(path)
        summary_path = stem + ".summary.csv"
        with open(path, "w", newline="") as fh:
            fh.write(self.rows_csv())
        with open(summary_path, "w", newline="") as fh:
            fh.write(self.summary_csv())
        return [path, summary_path]


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _table_csv(records, columns):
    buf = io.StringIO()
    buf.write(f"# adaptive-ope-report {REPORT_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in records:
        writer.writerow([_cell(r[c]) for c in columns])
    return buf.getvalue()


def read_rows_csv(path):
    """Parse a rows CSV written by ``ReplicationReport.write``."""
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    rows = []
    for r in csv.DictReader(lines):
        rows.append({
            "replication": int(r["replication"]),
            "checkpoint": int(r["checkpoint"]),
            "estimator": r["estimator"],
            "point": float(r["point"]),
            "variance": float(r["variance"]),
            "ci_lo": float(r["ci_lo"]),
            "ci_hi": float(r["ci_hi"]),
            "tstat": float(r["tstat"]) if r["tstat"] else None,
            "covered": None if r["covered"] == "" else r["covered"] == "True",
        })
    return rows


def run_experiment(config, jobs=1):
    """Run every replication of ``config`` and aggregate.

    Results do not depend on ``jobs``: each replication draws from its own
    stream keyed by (master_seed, index), and rows are reduced in index order.
    """
    env = config.build_env()
    _, _, truth = resolve_target(env, config.target)
    if jobs == 1:
        results = [_run_replication(config, env, i) for i in range(config.replications)]
    else:
        results = Parallel(n_jobs=jobs)(
            delayed(_run_replication)(config, env, i) for i in range(config.replications))
    rows, failures = [], []
    for rep_rows, failure in results:
        rows.extend(rep_rows)
        if failure is not None:
            failures.append(failure)
    summary = summarize(rows, truth, config.estimators, config.checkpoint_list)
    return ReplicationReport(config.to_dict(), truth, rows, summary, failures)


def _normalized(row, reference_rmse):
    return {"norm_bias": row["bias"] / reference_rmse, "norm_se": row["se"] / reference_rmse,
            "rel_rmse": row["rmse"] / reference_rmse}


PAIRS = (("C-MinVar", "NC-MinVar"), ("C-StableVar", "NC-StableVar"),
         ("NC-MinVar", "NC-StableVar"), ("C-MinVar", "C-StableVar"))


def run_dataset_suite(paths, config_template, jobs=1):
    """Bias and SE per estimator, normalized by the RMSE of DR, for each dataset.

    Also normalizes each contextual scheme by its non-contextual counterpart
    and each MinVar scheme by its StableVar counterpart. Datasets that fail
    to load are recorded and skipped.
    """
    estimators = tuple(dict.fromkeys(("DR",) + tuple(config_template.estimators)))
    datasets, failures = [], []
    for path in paths:
        try:
            config = dataclasses.replace(config_template, env="classification", dataset=path,
                                         estimators=estimators)
            report = run_experiment(config, jobs=jobs)
        except (DatasetError, ConfigError) as exc:
            failures.append({"dataset": path, "error": f"{type(exc).__name__}: {exc}"})
            continue
        by_name = {r["estimator"]: r for r in report.summary
                   if r["checkpoint"] == config.checkpoint_list[-1]}
        dr_rmse = by_name["DR"]["rmse"]
        entries = [dict(estimator=name, bias=r["bias"], se=r["se"], rmse=r["rmse"],
                        **_normalized(r, dr_rmse)) for name, r in by_name.items()]
        pairs = [dict(estimator=a, reference=b, **_normalized(by_name[a], by_name[b]["rmse"]))
                 for a, b in PAIRS if a in by_name and b in by_name]
        datasets.append({"dataset": os.path.basename(path), "truth": report.truth,
                         "replications": config.replications, "n_failures": report.n_failures,
                         "estimators": entries, "pairwise": pairs})
    return SuiteReport(datasets, failures)


@dataclass
class SuiteReport:
    datasets: list
    failures: list

    def relative_rmse(self, estimator):
        """RMSE relative to DR for ``estimator``, one value per loaded dataset."""
        return [next(e["rel_rmse"] for e in d["estimators"] if e["estimator"] == estimator)
                for d in self.datasets]

    def to_json(self):
        return json.dumps({"version": REPORT_VERSION, "datasets": self.datasets,
                           "failures": self.failures}, indent=1) + "\n"

    def to_csv(self):
        records = []
        for d in self.datasets:
            for e in d["estimators"]:
                records.append({"dataset": d["dataset"], "reference": "DR", **e})
            for p in d["pairwise"]:
                records.append({"dataset": d["dataset"], "bias": None, "se": None, "rmse": None,
                                **p})
        cols = ("dataset", "estimator", "reference", "bias", "se", "rmse", "norm_bias", "norm_se",
                "rel_rmse")
        return _table_csv(records, cols)

    def write(self, path, fmt="json"):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_json() if fmt == "json" else self.to_csv())
        return [path]


def bundled_datasets():
    """Paths of the small classification CSVs shipped with the package."""
    from importlib.resources import files

    root = files("adaptive_ope") / "data"
    return sorted(str(p) for p in root.iterdir() if p.name.endswith(".csv"))
