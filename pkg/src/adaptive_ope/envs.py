"""Data-generating processes.

All environments expose the same small surface used by the collection loop
and the harness: ``sample_contexts``, ``realize_rewards``, a ``mean_table``
over cells, ``cell_probabilities`` and ``policy_value``.
"""
from __future__ import annotations

import os

import numpy as np
import pandas as pd
from scipy.stats import norm

from .core import ContextSpace, IdentityCells, PolicyTable, RegionCells, RowCells
from .exceptions import DatasetError, NoAnalyticValueError

EXAMPLE1_PROBABILITIES = (0.6, 0.1, 0.1, 0.1, 0.1)
REGION_SIGNAL_MEAN = 0.7


class _CellEnv:
    """Shared behaviour for environments whose mean reward depends on the cell only."""

    kind = None
    noise_sd = 1.0
    default_agent = "tabular"
    default_outcome_model = "tabular"

    @property
    def n_cells(self):
        return self.mean_table.shape[0]

    @property
    def n_arms(self):
        return self.mean_table.shape[1]

    def cell_inputs(self, input_kind):
        if input_kind == "cells":
            return np.arange(self.n_cells)
        raise ValueError(f"{self.kind} environment has no per-cell features")

    def model_inputs(self, contexts, cells, input_kind):
        return cells if input_kind == "cells" else np.asarray(contexts, dtype=float)

    def realize_rewards(self, rng, cells, arms):
        means = self.mean_table[cells, arms]
        if self.noise_sd == 0:
            return means.astype(float)
        return means + self.noise_sd * rng.standard_normal(means.shape)

    def policy_value(self, policy):
        if not isinstance(policy, PolicyTable):
            raise NoAnalyticValueError("analytic values are only available for cell policy tables")
        if policy.n_cells != self.n_cells or policy.n_arms != self.n_arms:
            raise ValueError("policy shape does not match the environment")
        per_cell = np.sum(policy.table * self.mean_table, axis=1)
        return float(np.dot(self.cell_probabilities, per_cell))

    def best_contextual_policy(self):
        # argmax returns the lowest id among ties
        return PolicyTable.deterministic(np.argmax(self.mean_table, axis=1), self.n_arms,
                                         name="best_contextual")

    def best_fixed_arm_policy(self):
        arm = int(np.argmax(self.cell_probabilities @ self.mean_table))
        return PolicyTable.fixed_arm(arm, self.n_cells, self.n_arms, name="best_fixed_arm")

    def contrast_policies(self):
        """The (contextual, fixed-arm) pair whose value difference experiments target."""
        return self.best_contextual_policy(), self.best_fixed_arm_policy()

    def describe(self):
        return {"kind": self.kind, "noise_sd": self.noise_sd}


class DiscreteEnv(_CellEnv):
    """Finite context set with categorical context law and tabulated mean rewards.

    ``DiscreteEnv.example1()`` is the five-context, five-arm world where
    mu(x_i, w_j) = 1{i == j} and P(x) = [0.6, 0.1, 0.1, 0.1, 0.1].
    """

    def __init__(self, probabilities, mean_table, noise_sd=1.0, kind="discrete"):
        self.space = ContextSpace.discrete(probabilities)
        self.cell_probabilities = np.asarray(self.space.probabilities)
        self.mean_table = np.atleast_2d(np.asarray(mean_table, dtype=float))
        if self.mean_table.shape[0] != self.space.num_contexts:
            raise ValueError("mean_table needs one row per context")
        self.noise_sd = float(noise_sd)
        self.kind = kind
        self.cell_map = IdentityCells(self.space.num_contexts)
        self._cdf = np.cumsum(self.cell_probabilities)

    @classmethod
    def example1(cls, noise_sd=1.0):
        return cls(EXAMPLE1_PROBABILITIES, np.eye(5), noise_sd=noise_sd, kind="example1")

    def sample_contexts(self, rng, n):
        u = rng.random(n)
        cells = np.minimum(np.searchsorted(self._cdf, u, side="right"), self.n_cells - 1)
        cells = np.asarray(cells, dtype=np.int64)
        return cells, cells

    def describe(self):
        d = super().describe()
        if self.kind == "discrete":
            d.update(probabilities=self.cell_probabilities.tolist(),
                     mean_table=self.mean_table.tolist())
        return d


class RegionEnv(_CellEnv):
    """Four-arm world with X ~ N(0, I_3) and quadrant-designated best arms.

    With ``signal=True`` arm ``r`` has mean 0.7 in quadrant ``r`` of
    (X_1 > 0.5, X_2 > 0.5) and every other arm has mean 0; without signal all
    means are 0.
    """

    default_outcome_model = "ridge"

    def __init__(self, signal=True, noise_sd=1.0, threshold=0.5, dim=3):
        self.signal = bool(signal)
        self.kind = "region_signal" if signal else "region_nosignal"
        self.noise_sd = float(noise_sd)
        self.threshold = float(threshold)
        self.space = ContextSpace.continuous(dim)
        self.cell_map = RegionCells(threshold)
        self.mean_table = REGION_SIGNAL_MEAN * np.eye(4) if signal else np.zeros((4, 4))
        self.cell_probabilities = self.region_probabilities()

    def region_probabilities(self):
        below = norm.cdf(self.threshold)
        above = norm.sf(self.threshold)
        return np.array([below * below, below * above, above * below, above * above])

    def sample_contexts(self, rng, n):
        x = rng.standard_normal((n, self.space.dim))
        return x, self.cell_map(x)

    def contrast_policies(self):
        # The signal-scenario pair in both scenarios: without signal every
        # policy ties, and the contrast of interest is still "designated arm
        # per quadrant" versus "arm of the largest quadrant", with value 0.
        designated = PolicyTable.deterministic(np.arange(4), 4, name="best_contextual")
        largest = int(np.argmax(self.cell_probabilities))
        return designated, PolicyTable.fixed_arm(largest, 4, 4, name="best_fixed_arm")

    def mean_reward(self, context, arm):
        return float(self.mean_table[self.cell_map(context)[0], arm])

    def describe(self):
        d = super().describe()
        d.update(threshold=self.threshold, dim=self.space.dim)
        return d


class ClassificationEnv(_CellEnv):
    """Sequential classification as a bandit: features are contexts, classes are arms.

    Contexts are dataset rows drawn uniformly with replacement; the reward is
    1{arm == label} plus N(0, noise_sd^2) noise.
    """

    kind = "classification"
    default_agent = "linear"
    default_outcome_model = "ridge"

    def __init__(self, features, labels, n_classes=None, noise_sd=1.0, name="dataset"):
        features = np.asarray(features, dtype=float)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        labels = np.asarray(labels, dtype=np.int64)
        if features.shape[0] < 1 or features.shape[0] != labels.shape[0]:
            raise DatasetError("features and labels must be non-empty and row-aligned")
        n_classes = int(labels.max()) + 1 if n_classes is None else int(n_classes)
        if labels.min() < 0 or labels.max() >= n_classes:
            raise DatasetError("labels must lie in 0..K-1")
        self.features = features
        self.labels = labels
        self.noise_sd = float(noise_sd)
        self.name = name
        n = labels.shape[0]
        self.mean_table = np.zeros((n, n_classes))
        self.mean_table[np.arange(n), labels] = 1.0
        self.cell_probabilities = np.full(n, 1.0 / n)
        self.space = ContextSpace.continuous(features.shape[1])
        self.cell_map = RowCells(n)

    def sample_contexts(self, rng, n):
        rows = rng.integers(0, self.n_cells, size=n)
        return self.features[rows], rows

    def cell_inputs(self, input_kind):
        if input_kind == "features":
            return self.features
        return np.arange(self.n_cells)

    def policy_value(self, policy):
        if not isinstance(policy, PolicyTable):
            raise NoAnalyticValueError("analytic values are only available for cell policy tables")
        if policy.n_cells != self.n_cells or policy.n_arms != self.n_arms:
            raise ValueError("policy shape does not match the environment")
        # mean over rows keeps label frequencies exact (7/10, not sum of 0.1s)
        return float(np.sum(policy.table[np.arange(self.n_cells), self.labels]) / self.n_cells)

    def best_fixed_arm_policy(self):
        # majority class, lowest id among ties
        counts = np.bincount(self.labels, minlength=self.n_arms)
        return PolicyTable.fixed_arm(int(np.argmax(counts)), self.n_cells, self.n_arms,
                                     name="best_fixed_arm")

    def describe(self):
        d = super().describe()
        d.update(name=self.name, n_rows=int(self.n_cells), n_features=int(self.features.shape[1]),
                 n_classes=int(self.n_arms))
        return d


def make_env(kind, noise_sd=1.0, **kwargs):
    """Build an environment from its config name."""
    if kind == "example1":
        return DiscreteEnv.example1(noise_sd=noise_sd)
    if kind == "region_signal":
        return RegionEnv(signal=True, noise_sd=noise_sd)
    if kind == "region_nosignal":
        return RegionEnv(signal=False, noise_sd=noise_sd)
    if kind == "discrete":
        return DiscreteEnv(kwargs["probabilities"], kwargs["mean_table"], noise_sd=noise_sd)
    if kind == "classification":
        env = load_classification_csv(kwargs["dataset"], kwargs.get("label_column", "label"),
                                      standardize=kwargs.get("standardize", True))
        env.noise_sd = float(noise_sd)
        return env
    raise ValueError(f"unknown environment kind {kind!r}")


def sample_context(env, rng):
    """One context draw; returns the raw context (an id for discrete spaces)."""
    contexts, _ = env.sample_contexts(rng, 1)
    return contexts[0]


def realize_reward(env, context, arm, rng):
    """mu(context, arm) plus Gaussian noise. ``context`` is a row index for classification envs."""
    if isinstance(env, RegionEnv):
        cell = env.cell_map(context)[0]
    else:
        cell = int(context)
    return float(env.realize_rewards(rng, np.array([cell]), np.array([arm]))[0])


def best_contextual_policy(env):
    return env.best_contextual_policy()


def best_fixed_arm_policy(env):
    return env.best_fixed_arm_policy()


def load_classification_csv(path, label_column, standardize=True, noise_sd=1.0):
    """Read a CSV with one label column and numeric feature columns.

    Labels are factorized to 0..K-1 in order of first appearance. With
    ``standardize`` every feature column is centred and scaled to unit
    standard deviation; constant columns become all zeros.
    """
    if not os.path.exists(path):
        raise DatasetError(f"dataset file not found: {path}")
    frame = pd.read_csv(path)
    if label_column not in frame.columns:
        raise DatasetError(f"label column not found: {label_column!r}")
    raw = frame.drop(columns=[label_column])
    if raw.shape[1] == 0:
        raise DatasetError("dataset has no feature columns")
    try:
        features = raw.apply(pd.to_numeric, errors="raise").to_numpy(dtype=float)
    except (ValueError, TypeError) as exc:
        raise DatasetError(f"non-numeric feature cell in {path}: {exc}") from exc
    if not np.all(np.isfinite(features)):
        raise DatasetError(f"missing or non-finite feature values in {path}")
    labels, classes = pd.factorize(frame[label_column].astype(str))
    if len(classes) < 2:
        raise DatasetError(f"{path} has a single class")
    if standardize:
        mean = features.mean(axis=0)
        sd = features.std(axis=0)
        constant = sd == 0
        features = (features - mean) / np.where(constant, 1.0, sd)
        features[:, constant] = 0.0
    name = os.path.splitext(os.path.basename(path))[0]
    return ClassificationEnv(features, labels, n_classes=len(classes), noise_sd=noise_sd, name=name)
