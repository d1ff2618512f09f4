"""Domain types: context spaces, policies, logged steps, propensity snapshots and bandit logs.

Arms are 0-based. Every propensity snapshot produced in this package is a
table over a finite set of *cells* (the discrete contexts themselves, the
four quadrants of the region environment, or the rows of a classification
dataset); a ``cell_map`` translates a raw context into its cell id.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np

from .exceptions import NoAnalyticValueError, OverlapError
from .validation import LOGGED_SIMPLEX_ATOL, SIMPLEX_ATOL, check_simplex


@dataclass(frozen=True)
class ContextSpace:
    kind: str
    num_contexts: Optional[int] = None
    probabilities: Optional[tuple] = None
    dim: Optional[int] = None

    def __post_init__(self):
        if self.kind == "discrete":
            probs = np.asarray(self.probabilities, dtype=float)
            if probs.ndim != 1 or probs.size != self.num_contexts or self.num_contexts < 1:
                raise ValueError("discrete space needs one probability per context")
            if np.any(probs <= 0) or abs(probs.sum() - 1.0) > SIMPLEX_ATOL:
                raise ValueError("context probabilities must be positive and sum to 1")
        elif self.kind == "continuous":
            if self.dim is None or self.dim < 1:
                raise ValueError("continuous space needs dim >= 1")
        else:
            raise ValueError(f"unknown context space kind {self.kind!r}")

    @classmethod
    def discrete(cls, probabilities):
        probs = tuple(float(p) for p in probabilities)
        return cls("discrete", num_contexts=len(probs), probabilities=probs)

    @classmethod
    def continuous(cls, dim):
        return cls("continuous", dim=int(dim))

    @property
    def is_discrete(self):
        return self.kind == "discrete"

    def to_dict(self):
        if self.is_discrete:
            return {"kind": "discrete", "probabilities": list(self.probabilities)}
        return {"kind": "continuous", "dim": self.dim}

    @classmethod
    def from_dict(cls, d):
        if d["kind"] == "discrete":
            return cls.discrete(d["probabilities"])
        return cls.continuous(d["dim"])


class IdentityCells:
    """Cell map for discrete contexts: the cell of context ``i`` is ``i``."""

    name = "identity"

    def __init__(self, n_cells):
        self.n_cells = int(n_cells)

    def __call__(self, contexts):
        cells = np.asarray(contexts, dtype=np.int64)
        if cells.size and (cells.min() < 0 or cells.max() >= self.n_cells):
            raise ValueError(f"context ids must lie in 0..{self.n_cells - 1}")
        return cells

    def to_dict(self):
        return {"name": self.name, "n_cells": self.n_cells}


class RegionCells:
    """Quadrants of the first two coordinates split at ``threshold``.

    cell = 2 * [x_1 > threshold] + [x_2 > threshold], so cell 0 is the
    (low, low) quadrant.
    """

    name = "region"
    n_cells = 4

    def __init__(self, threshold=0.5):
        self.threshold = float(threshold)

    def __call__(self, contexts):
        x = np.atleast_2d(np.asarray(contexts, dtype=float))
        return 2 * (x[:, 0] > self.threshold).astype(np.int64) + (x[:, 1] > self.threshold)

    def to_dict(self):
        return {"name": self.name, "threshold": self.threshold}


class RowCells:
    """Cells of a classification environment: one cell per dataset row."""

    name = "rows"

    def __init__(self, n_cells):
        self.n_cells = int(n_cells)

    def __call__(self, contexts):
        raise TypeError("row cells cannot be recovered from features; use the logged cell ids")

    def to_dict(self):
        return {"name": self.name, "n_cells": self.n_cells}


def cell_map_from_dict(d):
    if d["name"] == "identity":
        return IdentityCells(d["n_cells"])
    if d["name"] == "region":
        return RegionCells(d["threshold"])
    if d["name"] == "rows":
        return RowCells(d["n_cells"])
    raise ValueError(f"unknown cell map {d['name']!r}")


class PolicyTable:
    """Target policy pi(x, .) stored as one simplex row per cell.

    Parameters
    ----------
    table : array-like of shape (n_cells, n_arms)
        Row-stochastic assignment probabilities.
    name : str
        Label used in reports.
    """

    def __init__(self, table, name="policy"):
        self.table = check_simplex(np.atleast_2d(np.asarray(table, dtype=float)), name=name)
        self.table.setflags(write=False)
        self.name = name

    @property
    def n_arms(self):
        return self.table.shape[1]

    @property
    def n_cells(self):
        return self.table.shape[0]

    @classmethod
    def fixed_arm(cls, arm, n_cells, n_arms, name=None):
        table = np.zeros((n_cells, n_arms))
        table[:, arm] = 1.0
        return cls(table, name=name or f"arm{arm}")

    @classmethod
    def deterministic(cls, arms, n_arms, name="policy"):
        arms = np.asarray(arms, dtype=np.int64)
        table = np.zeros((arms.size, n_arms))
        table[np.arange(arms.size), arms] = 1.0
        return cls(table, name=name)

    def __call__(self, cell):
        return self.table[int(cell)]

    def matrix(self, log):
        """Evaluate the policy at every logged context; shape (T, K)."""
        if self.n_cells != log.n_cells:
            raise ValueError(
                f"policy is defined on {self.n_cells} cells but the log has {log.n_cells}"
            )
        return self.table[log.cells]

    def mix(self, other, alpha):
        return PolicyTable(alpha * self.table + (1.0 - alpha) * other.table,
                           name=f"{alpha}*{self.name}+{1 - alpha}*{other.name}")

    def __repr__(self):
        return f"PolicyTable(name={self.name!r}, n_cells={self.n_cells}, n_arms={self.n_arms})"


class FunctionPolicy:
    """Policy given as a function of the raw context features.

    ``fn`` maps an (n, d) feature matrix to an (n, K) row-stochastic matrix.
    No analytic policy value is available for these.
    """

    def __init__(self, fn: Callable, n_arms, name="function_policy"):
        self.fn = fn
        self.n_arms = int(n_arms)
        self.name = name

    def __call__(self, context):
        return self.matrix_at(np.atleast_2d(context))[0]

    def matrix_at(self, contexts):
        return check_simplex(self.fn(np.atleast_2d(contexts)), name=self.name)

    def matrix(self, log):
        return self.matrix_at(log.contexts.reshape(log.T, -1))


@dataclass(frozen=True)
class LoggedStep:
    t: int
    context: object
    cell: int
    arm: int
    reward: float
    propensities: np.ndarray
    muhat: np.ndarray


@dataclass(frozen=True)
class PropensitySnapshot:
    """Assignment probabilities in force for one batch, as a table over cells."""

    batch_index: int
    start: int
    end: int
    table: np.ndarray
    floor_value: float
    cell_map: object = None

    def __post_init__(self):
        check_simplex(self.table, name="snapshot table", atol=LOGGED_SIMPLEX_ATOL)
        if self.table.min() < self.floor_value - 1e-12:
            raise ValueError("snapshot table violates its floor")

    def at_cells(self, cells):
        return self.table[np.asarray(cells, dtype=np.int64)]

    def __call__(self, context):
        if self.cell_map is None:
            raise TypeError("snapshot has no cell map; use at_cells")
        batch = np.atleast_1d(context) if np.ndim(context) == 0 else np.atleast_2d(context)
        return self.table[int(self.cell_map(batch)[0])]


@dataclass
class BanditLog:
    """Adaptively collected data in columnar form.

    Attributes
    ----------
    contexts : ndarray, shape (T,) or (T, d)
        Context ids (discrete spaces) or feature vectors.
    cells : ndarray of int, shape (T,)
        Cell id of every context; snapshots and policy tables are indexed by it.
    arms, rewards : ndarray, shape (T,)
    propensities : ndarray, shape (T, K)
        e_t(X_t, .) as used to draw the arm.
    muhat : ndarray, shape (T, K)
        Outcome-model predictions at X_t from a fit on strictly earlier steps.
    snapshots : list of PropensitySnapshot
        One per batch; their [start, end] intervals partition 1..T.
    """

    contexts: np.ndarray
    cells: np.ndarray
    arms: np.ndarray
    rewards: np.ndarray
    propensities: np.ndarray
    muhat: np.ndarray
    snapshots: list
    space: ContextSpace
    n_arms: int
    n_cells: int
    cell_map: object = None
    floor: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("contexts", "cells", "arms", "rewards", "propensities", "muhat"):
            getattr(self, name).setflags(write=False)

    @property
    def T(self):
        return int(self.arms.shape[0])

    @property
    def batch_starts(self):
        return np.array([s.start for s in self.snapshots], dtype=np.int64)

    @property
    def batch_index(self):
        """0-based batch id of every step, shape (T,)."""
        counts = [s.end - s.start + 1 for s in self.snapshots]
        return np.repeat(np.arange(len(self.snapshots)), counts)

    @property
    def batch_sizes(self):
        return np.array([s.end - s.start + 1 for s in self.snapshots], dtype=np.int64)

    def snapshot_tables(self):
        """Stacked snapshot tables, shape (n_batches, n_cells, K)."""
        return np.stack([s.table for s in self.snapshots])

    def step(self, i):
        """The i-th step (0-based position, 1-based ``t``)."""
        return LoggedStep(
            t=i + 1,
            context=self.contexts[i],
            cell=int(self.cells[i]),
            arm=int(self.arms[i]),
            reward=float(self.rewards[i]),
            propensities=self.propensities[i],
            muhat=self.muhat[i],
        )

    @property
    def steps(self) -> Iterator[LoggedStep]:
        return (self.step(i) for i in range(self.T))

    def prefix(self, n):
        """The log restricted to steps 1..n, snapshots truncated accordingly."""
        if not 1 <= n <= self.T:
            raise ValueError(f"prefix length must be in 1..{self.T}")
        if n == self.T:
            return self
        snaps = []
        for s in self.snapshots:
            if s.start > n:
                break
            if s.end > n:
                s = PropensitySnapshot(s.batch_index, s.start, n, s.table, s.floor_value,
                                       s.cell_map)
            snaps.append(s)
        return BanditLog(
            contexts=self.contexts[:n], cells=self.cells[:n], arms=self.arms[:n],
            rewards=self.rewards[:n], propensities=self.propensities[:n], muhat=self.muhat[:n],
            snapshots=snaps, space=self.space, n_arms=self.n_arms, n_cells=self.n_cells,
            cell_map=self.cell_map, floor=self.floor, meta=self.meta,
        )

    def validate(self):
        """Check the structural invariants; raises ``ValueError`` on the first violation."""
        T, K = self.T, self.n_arms
        if self.propensities.shape != (T, K) or self.muhat.shape != (T, K):
            raise ValueError("propensities and muhat must have shape (T, K)")
        if self.cells.shape != (T,) or self.rewards.shape != (T,):
            raise ValueError("cells and rewards must have shape (T,)")
        taken = self.propensities[np.arange(T), self.arms]
        if np.any(~(taken > 0)):
            bad = int(np.flatnonzero(~(taken > 0))[0]) + 1
            raise OverlapError(f"zero propensity for the taken arm at t={bad}")
        expected = 1
        for s in self.snapshots:
            if s.start != expected or s.end < s.start:
                raise ValueError("snapshot intervals must partition 1..T")
            expected = s.end + 1
        if expected != T + 1:
            raise ValueError("snapshot intervals must partition 1..T")
        check_simplex(self.propensities, name="logged propensities", atol=LOGGED_SIMPLEX_ATOL)
        replay = self.snapshot_tables()[self.batch_index, self.cells]
        if np.max(np.abs(replay - self.propensities)) > LOGGED_SIMPLEX_ATOL:
            raise ValueError("logged propensities disagree with the batch snapshots")
        return self


def true_policy_value(env, policy):
    """Analytic policy value Q(pi) of ``policy`` in ``env``."""
    value = getattr(env, "policy_value", None)
    if value is None:
        raise NoAnalyticValueError(f"{type(env).__name__} has no analytic policy value")
    return value(policy)
