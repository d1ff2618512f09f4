"""Adaptive data collection with floored, batched Thompson sampling."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import BanditLog, PropensitySnapshot
from .exceptions import InfeasibleFloorError
from .outcome_models import make_outcome_model
from .validation import check_fit_inputs


@dataclass(frozen=True)
class FloorSchedule:
    """Per-arm propensity floor ``coefficient * t ** (-exponent)``."""

    coefficient: float
    exponent: float

    def __post_init__(self):
        if self.coefficient <= 0:
            raise ValueError("floor coefficient must be positive")
        if self.exponent < 0:
            raise ValueError("floor exponent must be non-negative")

    def __call__(self, t):
        if np.ndim(t):
            return self.coefficient * np.asarray(t, dtype=float) ** (-self.exponent)
        return self.coefficient * float(t) ** (-self.exponent)

    @property
    def satisfies_decay_assumption(self):
        """Whether the decay rate is below 1/2, as the CLT results require."""
        return self.exponent < 0.5

    def check_feasible(self, n_arms, t=1):
        if n_arms * self(t) > 1.0 + 1e-12:
            raise InfeasibleFloorError(
                f"floor {self(t):.4g} at t={t} is infeasible for {n_arms} arms")

    @classmethod
    def fast(cls):
        """t^-0.8 / 4, the schedule used for the four-arm region experiments."""
        return cls(0.25, 0.8)

    @classmethod
    def slow(cls):
        """Same scale with exponent 0.45 < 1/2."""
        return cls(0.25, 0.45)

    @classmethod
    def classification(cls, n_arms):
        """t^-0.5 / K."""
        return cls(1.0 / n_arms, 0.5)

    def to_dict(self):
        return asdict(self)


def apply_floor(p, floor):
    """Raise entries below ``floor`` to it and shrink the excess of the others.

    Entries at or above the floor keep their excess over the floor in the
    same proportions, so their relative order is preserved. Works row-wise on
    a matrix.
    """
    p = np.asarray(p, dtype=float)
    squeeze = p.ndim == 1
    P = np.atleast_2d(p).copy()
    K = P.shape[1]
    if floor < 0 or K * floor > 1.0 + 1e-12:
        raise InfeasibleFloorError(f"floor {floor} is infeasible for {K} arms")
    if K * floor >= 1.0 - 1e-15:
        out = np.full_like(P, 1.0 / K)
        return out[0] if squeeze else out
    for _ in range(K):
        low = P < floor
        if not low.any():
            break
        excess = np.where(low, 0.0, P - floor)
        total = excess.sum(axis=1, keepdims=True)
        budget = 1.0 - K * floor
        scale = np.divide(budget, total, out=np.zeros_like(total), where=total > 0)
        P = floor + excess * scale
    return P[0] if squeeze else P


def _argmax_random_ties(draws, rng):
    idx = draws.argmax(axis=-1)
    top = draws.max(axis=-1, keepdims=True)
    is_top = draws == top
    tied = is_top.sum(axis=-1) > 1
    if tied.any():
        keys = rng.random(is_top[tied].shape) * is_top[tied]
        idx[tied] = keys.argmax(axis=-1)
    return idx


def _count_wins(winners, n_arms):
    # winners: (n_inputs, n_draws)
    n = winners.shape[0]
    flat = (np.arange(n)[:, None] * n_arms + winners).ravel()
    return np.bincount(flat, minlength=n * n_arms).reshape(n, n_arms)


class TabularThompsonSampling(BaseEstimator):
    """Normal-Normal Thompson sampling with one posterior per (cell, arm).

    Rewards are modelled as N(mu, noise_var) with prior mu ~ N(prior_mean,
    noise_var / prior_count).
    """

    input_kind = "cells"

    def __init__(self, n_cells=1, n_arms=2, prior_mean=0.0, prior_count=1.0, noise_var=1.0,
                 num_draws=10_000):
        self.n_cells = n_cells
        self.n_arms = n_arms
        self.prior_mean = prior_mean
        self.prior_count = prior_count
        self.noise_var = noise_var
        self.num_draws = num_draws

    def fit(self, X, arms, rewards):
        cells, arms, rewards = check_fit_inputs(X, arms, rewards, self.n_arms, features=False)
        flat = cells * self.n_arms + arms
        size = self.n_cells * self.n_arms
        shape = (self.n_cells, self.n_arms)
        self.counts_ = np.bincount(flat, minlength=size).reshape(shape)
        sums = np.bincount(flat, weights=rewards, minlength=size)
        sumsq = np.bincount(flat, weights=rewards ** 2, minlength=size)
        self.sums_ = sums.astype(float).reshape(shape)
        self.sumsq_ = sumsq.astype(float).reshape(shape)
        return self

    def posterior(self):
        check_is_fitted(self, "counts_")
        precision = self.prior_count + self.counts_
        mean = (self.prior_mean * self.prior_count + self.sums_) / precision
        return mean, self.noise_var / precision

    def predict_proba(self, X, random_state):
        """Monte Carlo probability that each arm has the largest posterior draw."""
        rng = _as_generator(random_state)
        cells = np.atleast_1d(np.asarray(X, dtype=np.int64))
        mean, var = self.posterior()
        mean, sd = mean[cells], np.sqrt(var[cells])
        draws = mean + sd * rng.standard_normal((self.num_draws,) + mean.shape)
        winners = _argmax_random_ties(draws, rng).T
        return _count_wins(winners, self.n_arms) / self.num_draws


class LinearThompsonSampling(BaseEstimator):
    """Linear Thompson sampling with an independent ridge posterior per arm.

    theta_w ~ N(A_w^-1 b_w, noise_var * A_w^-1) with A_w = ridge*I + sum x x^T.
    """

    input_kind = "features"

    def __init__(self, n_arms=2, ridge=1.0, noise_var=1.0, fit_intercept=True, num_draws=10_000):
        self.n_arms = n_arms
        self.ridge = ridge
        self.noise_var = noise_var
        self.fit_intercept = fit_intercept
        self.num_draws = num_draws

    def _design(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if self.fit_intercept:
            X = np.hstack([np.ones((X.shape[0], 1)), X])
        return X

    def fit(self, X, arms, rewards):
        X, arms, rewards = check_fit_inputs(X, arms, rewards, self.n_arms)
        Z = self._design(X)
        p = Z.shape[1]
        self.gram_ = np.empty((self.n_arms, p, p))
        self.response_ = np.empty((self.n_arms, p))
        self.coef_ = np.empty((self.n_arms, p))
        self.chol_cov_ = np.empty((self.n_arms, p, p))
        for w in range(self.n_arms):
            Zw, yw = Z[arms == w], rewards[arms == w]
            A = self.ridge * np.eye(p) + Zw.T @ Zw
            self.gram_[w] = A
            self.response_[w] = Zw.T @ yw
            A_inv = np.linalg.inv(A)
            A_inv = (A_inv + A_inv.T) / 2
            self.coef_[w] = A_inv @ self.response_[w]
            self.chol_cov_[w] = np.linalg.cholesky(self.noise_var * A_inv)
        return self

    def predict_proba(self, X, random_state, max_block=2_000_000):
        check_is_fitted(self, "coef_")
        rng = _as_generator(random_state)
        Z = self._design(X)
        n, p = Z.shape
        wins = np.zeros((n, self.n_arms), dtype=np.int64)
        chunk = max(1, min(self.num_draws, max_block // max(1, n * self.n_arms)))
        done = 0
        while done < self.num_draws:
            m = min(chunk, self.num_draws - done)
            noise = rng.standard_normal((self.n_arms, m, p))
            theta = self.coef_[:, None, :] + np.einsum("wij,wmj->wmi", self.chol_cov_, noise)
            scores = np.einsum("np,wmp->nmw", Z, theta)
            wins += _count_wins(_argmax_random_ties(scores, rng), self.n_arms)
            done += m
        return wins / self.num_draws


def ts_probabilities(state, context, num_draws, rng):
    """Thompson sampling assignment probabilities at one context (or a batch of them)."""
    agent = copy.copy(state)
    agent.num_draws = num_draws
    single = np.ndim(context) == (0 if state.input_kind == "cells" else 1)
    inputs = np.atleast_1d(context) if state.input_kind == "cells" else np.atleast_2d(context)
    probs = agent.predict_proba(inputs, rng)
    return probs[0] if single else probs


def _as_generator(random_state):
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)


@dataclass(frozen=True)
class AgentConfig:
    kind: str = "tabular"
    num_draws: int = 10_000
    prior_mean: float = 0.0
    prior_count: float = 1.0
    noise_var: float = 1.0
    ridge: float = 1.0

    def build(self, env):
        if self.kind == "tabular":
            return TabularThompsonSampling(n_cells=env.n_cells, n_arms=env.n_arms,
                                           prior_mean=self.prior_mean, prior_count=self.prior_count,
                                           noise_var=self.noise_var, num_draws=self.num_draws)
        if self.kind == "linear":
            return LinearThompsonSampling(n_arms=env.n_arms, ridge=self.ridge,
                                          noise_var=self.noise_var, num_draws=self.num_draws)
        raise ValueError(f"unknown agent kind {self.kind!r}")


def _sample_arms(propensities, rng):
    u = rng.random(propensities.shape[0])
    cum = np.cumsum(propensities, axis=1)
    arms = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(arms, propensities.shape[1] - 1)


def collect(env, agent_config, T, batch_size, floor_schedule, rng, outcome_model=None,
            outcome_params=None):
    """Run a batched, floored Thompson sampling experiment for ``T`` steps.

    The first batch is uniform. Before each later batch the agent and the
    outcome model are refit on all earlier steps; the floored assignment
    probabilities over all cells (floor evaluated at the batch's first step)
    form that batch's snapshot. A trailing partial batch is played under the
    last snapshot.
    """
    if not T >= batch_size >= 1:
        raise ValueError("need T >= batch_size >= 1")
    K, n_cells = env.n_arms, env.n_cells
    agent = agent_config.build(env)
    kind = outcome_model or env.default_outcome_model
    params = dict(outcome_params or {})
    n_batches = T // batch_size
    starts = [1 + b * batch_size for b in range(n_batches)]
    ends = starts[1:] + [T + 1]
    ends = [e - 1 for e in ends]

    contexts, cells, arms, rewards, props, muhats, snapshots = [], [], [], [], [], [], []
    agent_inputs = env.cell_inputs(agent.input_kind)
    for b, (start, end) in enumerate(zip(starts, ends)):
        seen = start - 1
        past_cells = np.concatenate(cells) if cells else np.zeros(0, dtype=np.int64)
        past_ctx = np.concatenate(contexts) if contexts else None
        past_arms = np.concatenate(arms) if arms else np.zeros(0, dtype=np.int64)
        past_rewards = np.concatenate(rewards) if rewards else np.zeros(0)
        if b == 0:
            table = np.full((n_cells, K), 1.0 / K)
            floor_value = min(floor_schedule(1), 1.0 / K)
        else:
            floor_value = floor_schedule(start)
            floor_schedule.check_feasible(K, start)
            agent_x = env.model_inputs(past_ctx, past_cells, agent.input_kind)
            agent.fit(agent_x, past_arms, past_rewards)
            table = apply_floor(agent.predict_proba(agent_inputs, rng), floor_value)
        snapshot = PropensitySnapshot(b, start, end, table, floor_value, env.cell_map)
        model = make_outcome_model(kind, K, n_cells=n_cells, **params)
        if seen:
            inputs = env.model_inputs(past_ctx, past_cells, model.input_kind)
            model.fit(inputs, past_arms, past_rewards)
        else:
            model.fit(_empty_inputs(model.input_kind, env), past_arms, past_rewards)

        n = end - start + 1
        ctx, cl = env.sample_contexts(rng, n)
        e = table[cl]
        a = _sample_arms(e, rng)
        y = env.realize_rewards(rng, cl, a)
        mu = model.predict(env.model_inputs(ctx, cl, model.input_kind))

        contexts.append(ctx)
        cells.append(cl)
        arms.append(a)
        rewards.append(y)
        props.append(e)
        muhats.append(mu)
        snapshots.append(snapshot)

    log = BanditLog(
        contexts=np.concatenate(contexts), cells=np.concatenate(cells).astype(np.int64),
        arms=np.concatenate(arms).astype(np.int64), rewards=np.concatenate(rewards),
        propensities=np.concatenate(props), muhat=np.concatenate(muhats),
        snapshots=snapshots, space=env.space, n_arms=K, n_cells=n_cells, cell_map=env.cell_map,
        floor=floor_schedule.to_dict(),
        meta={"env": env.describe(), "agent": asdict(agent_config), "batch_size": batch_size,
              "outcome_model": kind, "outcome_params": params},
    )
    if not floor_schedule.satisfies_decay_assumption:
        log.meta["floor_note"] = "floor exponent >= 0.5; CLT decay condition not met"
    return log


def _empty_inputs(input_kind, env):
    if input_kind == "cells":
        return np.zeros(0, dtype=np.int64)
    return np.zeros((0, env.space.dim))
