"""Exact and Monte Carlo oracles for the doubly robust score.

A *frozen setup* fixes the history: context law, true means, propensities
and outcome-model predictions are plain tables. Rewards are two-point,
Y = mu +/- reward_sd with probability 1/2 each, so every moment of the
score is a finite sum that can be enumerated exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.stats import kstest

from .exceptions import NoAnalyticValueError

MAX_ATOMS = 10**6


@dataclass(frozen=True)
class FrozenSetup:
    """Fixed tables for one step of the score.

    Parameters
    ----------
    context_probs : ndarray of shape (n,)
    mu, e, muhat : ndarray of shape (n, K)
        True means, propensities (rows on the simplex) and predictions.
    reward_sd : float
        Half-width of the two-point reward support; Var(Y | x, w) = reward_sd**2.
    """

    context_probs: np.ndarray
    mu: np.ndarray
    e: np.ndarray
    muhat: np.ndarray
    reward_sd: float = 1.0

    def __post_init__(self):
        for name in ("context_probs", "mu", "e", "muhat"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, arr)
        if self.mu.shape != self.e.shape or self.mu.shape != self.muhat.shape:
            raise ValueError("mu, e and muhat must share one shape")
        if self.context_probs.shape != (self.mu.shape[0],):
            raise ValueError("context_probs needs one entry per context")
        if np.any(self.e <= 0):
            raise ValueError("propensities must be positive")

    @property
    def n_contexts(self):
        return self.mu.shape[0]

    @property
    def n_arms(self):
        return self.mu.shape[1]


@dataclass
class ScoreMoments:
    """Conditional moments of the score given the context (and the frozen history)."""

    mean: np.ndarray
    variance: np.ndarray
    arm_covariance: np.ndarray
    marginal_mean: float
    n_atoms: int


def random_frozen_setup(rng, n_contexts=3, n_arms=3, reward_sd=1.0, min_share=0.5):
    """A random frozen setup with propensities bounded below by ``min_share / K``."""
    probs = rng.dirichlet(np.ones(n_contexts))
    raw = rng.dirichlet(np.ones(n_arms), size=n_contexts)
    e = (1 - min_share) * raw + min_share / n_arms
    mu = rng.normal(size=(n_contexts, n_arms))
    muhat = mu + rng.normal(scale=0.5, size=mu.shape)
    return FrozenSetup(probs, mu, e, muhat, reward_sd)


def _policy_table(policy, setup):
    table = np.asarray(getattr(policy, "table", policy), dtype=float)
    if table.shape != setup.mu.shape:
        raise ValueError("policy table must have shape (n_contexts, K)")
    return table


def brute_force_score_moments(setup, policy):
    """Enumerate every (x, w, y) atom of the score distribution.

    Returns per-context mean and variance of Gamma(x, pi), the per-context
    covariance matrix of the per-arm scores
    Gamma(w) = muhat_w + 1{W = w} / e_w * (Y - muhat_w), and the mean over x.
    """
    n, K = setup.mu.shape
    n_atoms = n * K * 2
    if n_atoms > MAX_ATOMS:
        raise ValueError(f"support has {n_atoms} atoms, more than {MAX_ATOMS}")
    pi = _policy_table(policy, setup)
    offsets = np.array([-setup.reward_sd, setup.reward_sd])
    mean = np.empty(n)
    variance = np.empty(n)
    cov = np.empty((n, K, K))
    for x in range(n):
        mu, e, mh = setup.mu[x], setup.e[x], setup.muhat[x]
        # atoms indexed by (taken arm w, reward sign); probability e_w / 2
        prob = np.repeat(e / 2, 2)
        y = (mu[:, None] + offsets[None, :]).ravel()
        arm = np.repeat(np.arange(K), 2)
        arm_scores = np.tile(mh, (2 * K, 1))
        rows = np.arange(2 * K)
        arm_scores[rows, arm] += (y - mh[arm]) / e[arm]
        scores = arm_scores @ pi[x]
        mean[x] = np.sum(prob * scores)
        variance[x] = np.sum(prob * (scores - mean[x]) ** 2)
        centred = arm_scores - prob @ arm_scores
        cov[x] = (centred * prob[:, None]).T @ centred
    return ScoreMoments(mean, variance, cov, float(setup.context_probs @ mean), n_atoms)


def regression_error_term(setup, policy):
    """A = sum_w pi^2 (muhat - mu)^2 / e - (sum_w pi (muhat - mu))^2, per context."""
    pi = _policy_table(policy, setup)
    d = setup.muhat - setup.mu
    return np.sum(pi * pi * d * d / setup.e, axis=1) - np.sum(pi * d, axis=1) ** 2


def score_variance_closed_form(setup, policy):
    """sum_w pi^2 Var(Y | x, w) / e + A, per context; returns (variance, A)."""
    pi = _policy_table(policy, setup)
    A = regression_error_term(setup, policy)
    noise = setup.reward_sd**2 * np.sum(pi * pi / setup.e, axis=1)
    return noise + A, A


def arm_covariance_closed_form(setup):
    """Covariance matrix of the per-arm scores, per context.

    Diagonal: Var(Y) / e + (1 / e - 1)(muhat - mu)^2.
    Off-diagonal: -(muhat_1 - mu_1)(muhat_2 - mu_2).
    """
    d = setup.muhat - setup.mu
    cov = -d[:, :, None] * d[:, None, :]
    diag = setup.reward_sd**2 / setup.e + (1 / setup.e - 1) * d * d
    idx = np.arange(setup.n_arms)
    cov[:, idx, idx] = diag
    return cov


def variance_proxy(setup, policy):
    """sum_w pi^2(x, w) / e(x, w), per context."""
    pi = _policy_table(policy, setup)
    return np.sum(pi * pi / setup.e, axis=1)


def monte_carlo_score_moments(setup, policy, n_draws, rng):
    """Sampled per-context mean and variance of the score with their standard errors."""
    pi = _policy_table(policy, setup)
    n, K = setup.mu.shape
    out = {"mean": np.empty(n), "mean_se": np.empty(n), "variance": np.empty(n),
           "variance_se": np.empty(n)}
    for x in range(n):
        cdf = np.cumsum(setup.e[x])
        arms = np.minimum(np.searchsorted(cdf, rng.random(n_draws), side="right"), K - 1)
        signs = np.where(rng.random(n_draws) < 0.5, -1.0, 1.0)
        y = setup.mu[x, arms] + setup.reward_sd * signs
        mh = setup.muhat[x]
        scores = pi[x] @ mh + pi[x, arms] / setup.e[x, arms] * (y - mh[arms])
        m = scores.mean()
        c = scores - m
        s2 = np.mean(c * c)
        m4 = np.mean(c**4)
        out["mean"][x] = m
        out["mean_se"][x] = np.sqrt(s2 / n_draws)
        out["variance"][x] = s2
        out["variance_se"][x] = np.sqrt(max(m4 - s2 * s2, 0.0) / n_draws)
    return out


def power_sums(pi, e):
    """(sum pi^2/e, sum pi^3/e^2, sum pi^4/e^3); exact when given Fractions."""
    s2 = sum(p * p / q for p, q in zip(pi, e))
    s3 = sum(p**3 / q**2 for p, q in zip(pi, e))
    s4 = sum(p**4 / q**3 for p, q in zip(pi, e))
    return s2, s3, s4


def power_chain_holds(pi, e):
    """Whether 1 <= sum pi^2/e <= sum pi^3/e^2 <= sum pi^4/e^3."""
    s2, s3, s4 = power_sums(pi, e)
    return 1 <= s2 <= s3 <= s4


def random_rational_simplex(rng, k, denominator=10**6):
    """A point of the open simplex with rational coordinates summing exactly to 1."""
    cuts = sorted(int(c) for c in rng.choice(np.arange(1, denominator), size=k - 1, replace=False))
    edges = [0] + cuts + [denominator]
    return [Fraction(b - a, denominator) for a, b in zip(edges[:-1], edges[1:])]


def ks_distance(samples):
    """Kolmogorov-Smirnov distance of finite samples from the standard normal."""
    x = np.asarray(samples, dtype=float)
    x = x[np.isfinite(x)]
    return float(kstest(x, "norm").statistic)


def inverse_propensity_dispersion(logs):
    """Spread of 1/e_t(x, w) across independent runs at matched batches.

    For every batch and (cell, arm) the statistic is
    max over runs of |e^-1 / mean_runs(e^-1) - 1|; its decay with the batch
    index is an informal check that inverse propensities concentrate.
    Only meaningful for logs of equal length on a shared cell space.

    Returns
    -------
    ndarray of shape (n_batches,)
        The supremum over cells and arms per batch.
    """
    tables = [log.snapshot_tables() for log in logs]
    if len(tables) < 2 or len({t.shape for t in tables}) != 1:
        raise ValueError("need at least two logs with matching snapshot shapes")
    inv = 1.0 / np.stack(tables)  # (runs, batches, cells, K)
    ratio = np.abs(inv / inv.mean(axis=0) - 1.0)
    return ratio.max(axis=(0, 2, 3))


def coverage_experiment(config, jobs=1):
    """Coverage, mean CI radius and studentized statistics per estimator.

    Runs the replication harness and reads off the largest checkpoint.

    Returns
    -------
    dict
        ``{estimator: {"coverage", "mean_radius", "tstat_samples"}}``
    """
    from .harness import run_experiment

    report = run_experiment(config, jobs=jobs)
    if report.truth is None:
        raise NoAnalyticValueError("coverage needs an analytic target value")
    last = max(config.checkpoint_list)
    out = {}
    for row in report.summary:
        if row["checkpoint"] != last:
            continue
        tstats = [r["tstat"] for r in report.rows
                  if r["checkpoint"] == last and r["estimator"] == row["estimator"]]
        out[row["estimator"]] = {
            "coverage": row["coverage"],
            "mean_radius": row["mean_radius"],
            "tstat_samples": np.array(tstats, dtype=float),
        }
    return out


def run_oracle_suite(seed=0, n_setups=100, n_pairs=10_000, mc_setups=3, mc_draws=10**6):
    """Run the exact-identity, power-chain and Monte Carlo checks.

    Returns a JSON-serialisable report with a top-level ``passed`` flag.
    """
    rng = np.random.default_rng(seed)
    worst_var = worst_cov = worst_mean = 0.0
    min_A = np.inf
    for _ in range(n_setups):
        setup = random_frozen_setup(rng, int(rng.integers(1, 5)), int(rng.integers(2, 6)))
        pi = rng.dirichlet(np.ones(setup.n_arms), size=setup.n_contexts)
        exact = brute_force_score_moments(setup, pi)
        closed, A = score_variance_closed_form(setup, pi)
        worst_var = max(worst_var, float(np.max(np.abs(exact.variance - closed))))
        worst_cov = max(worst_cov, float(np.max(np.abs(exact.arm_covariance
                                                        - arm_covariance_closed_form(setup)))))
        target = np.sum(pi * setup.mu, axis=1)
        worst_mean = max(worst_mean, float(np.max(np.abs(exact.mean - target))))
        min_A = min(min_A, float(A.min()))

    chain_failures = 0
    for _ in range(n_pairs):
        k = int(rng.integers(2, 6))
        if not power_chain_holds(random_rational_simplex(rng, k), random_rational_simplex(rng, k)):
            chain_failures += 1

    worst_z = 0.0
    for _ in range(mc_setups):
        setup = random_frozen_setup(rng, 2, 3)
        pi = rng.dirichlet(np.ones(3), size=2)
        exact = brute_force_score_moments(setup, pi)
        mc = monte_carlo_score_moments(setup, pi, mc_draws, rng)
        z_mean = np.abs(mc["mean"] - exact.mean) / mc["mean_se"]
        z_var = np.abs(mc["variance"] - exact.variance) / mc["variance_se"]
        worst_z = max(worst_z, float(np.max(z_mean)), float(np.max(z_var)))

    checks = {
        "variance_identity_max_abs_error": worst_var,
        "covariance_identity_max_abs_error": worst_cov,
        "unbiasedness_max_abs_error": worst_mean,
        "min_regression_error_term": min_A,
        "power_chain_failures": chain_failures,
        "monte_carlo_max_z": worst_z,
    }
    passed = (worst_var <= 1e-12 and worst_cov <= 1e-12 and worst_mean <= 1e-12
              and min_A >= -1e-12 and chain_failures == 0 and worst_z <= 4.0)
    return {"seed": seed, "n_setups": n_setups, "n_pairs": n_pairs, "checks": checks,
            "passed": bool(passed)}
