"""Off-policy estimators for adaptively collected contextual bandit data.

Every estimator here is a weighted average of doubly robust scores

    Gamma_t = sum_w pi(X_t, w) * (mu_hat_t(X_t, w)
              + 1{W_t = w} / e_t(X_t, w) * (Y_t - mu_hat_t(X_t, w)))

that differ only in how the average is weighted:

* uniform (DR, and IPW with mu_hat = 0),
* non-contextual adaptive weights h_t = phi(mean_{s<t} sum_w pi^2(X_s, w) / e_t(X_s, w)),
* contextual adaptive weights h_t(x) = phi(sum_w pi^2(x, w) / e_t(x, w)),

with phi(v) = v^-1/2 (StableVar) or phi(v) = 1/v (MinVar). The direct
method averages the final outcome model instead of the scores.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator

from .exceptions import OverlapError
from .validation import check_level

PROXY_FLOOR = 1e-12

PHI = {
    "stablevar": lambda v: 1.0 / np.sqrt(v),
    "minvar": lambda v: 1.0 / v,
}
PHI_LABELS = {"stablevar": "StableVar", "minvar": "MinVar"}
FAMILY_PREFIX = {"noncontextual": "NC", "contextual": "C"}


@dataclass(frozen=True)
class WeightScheme:
    family: str = "uniform"
    phi: str = "stablevar"

    def __post_init__(self):
        if self.family not in ("uniform", "noncontextual", "contextual"):
            raise ValueError(f"unknown weighting family {self.family!r}")
        if self.phi not in PHI:
            raise ValueError(f"unknown phi {self.phi!r}")

    @property
    def name(self):
        if self.family == "uniform":
            return "DR"
        return f"{FAMILY_PREFIX[self.family]}-{PHI_LABELS[self.phi]}"

    @classmethod
    def from_name(cls, name):
        """Parse 'DR', 'NC-StableVar', 'C-MinVar', ..."""
        if name.upper() == "DR":
            return cls("uniform")
        prefix, _, phi = name.partition("-")
        family = {"NC": "noncontextual", "C": "contextual"}.get(prefix.upper())
        if family is None or phi.lower() not in PHI:
            raise ValueError(f"unknown weighting scheme {name!r}")
        return cls(family, phi.lower())


UNIFORM = WeightScheme("uniform")


@dataclass(frozen=True)
class VarianceProxy:
    """Which policy row enters sum_w pi^2 / e: a single policy or a contrast pi_1 - pi_2."""

    policy: object
    baseline: object = None

    @property
    def kind(self):
        return "single" if self.baseline is None else "contrast"

    def squared_rows(self, log):
        P = policy_matrix(self.policy, log)
        if self.baseline is not None:
            P = P - policy_matrix(self.baseline, log)
        return P * P


@dataclass
class WeightedEstimate:
    point: float
    variance: float
    scheme: Optional[WeightScheme]
    weights: np.ndarray
    estimator: str
    policy: str = "policy"
    metadata: dict = field(default_factory=dict)

    @property
    def std_error(self):
        return float(np.sqrt(self.variance))

    def to_record(self, level=0.95, reference=None):
        ci = confidence_interval(self, level, reference)
        return {
            "estimator": self.estimator,
            "phi": (None if self.scheme is None or self.scheme.family == "uniform"
                    else self.scheme.phi),
            "family": None if self.scheme is None else self.scheme.family,
            "policy": self.policy,
            "point": self.point,
            "variance": self.variance,
            "ci_lo": ci.lo,
            "ci_hi": ci.hi,
            "tstat": ci.tstat,
        }


class ConfidenceInterval(NamedTuple):
    lo: float
    hi: float
    tstat: Optional[float]
    infinite_tstat: bool = False


def policy_matrix(policy, log):
    return policy.matrix(log)


def _policy_row(policy, step):
    if hasattr(policy, "table"):
        return policy(step.cell)
    return policy(step.context)


def dr_score(step, policy):
    """Doubly robust score of one logged step."""
    p = np.asarray(_policy_row(policy, step), dtype=float)
    e = float(step.propensities[step.arm])
    if not e > 0:
        raise OverlapError(f"zero propensity for the taken arm at t={step.t}")
    mu = np.asarray(step.muhat, dtype=float)
    return float(np.dot(p, mu) + p[step.arm] / e * (step.reward - mu[step.arm]))


def dr_scores(log, policy, muhat=None):
    """Vectorised doubly robust scores, shape (T,). ``muhat=0`` gives IPW scores."""
    P = policy_matrix(policy, log)
    mu = log.muhat if muhat is None else np.broadcast_to(np.asarray(muhat, dtype=float), P.shape)
    idx = np.arange(log.T)
    e = log.propensities[idx, log.arms]
    if np.any(~(e > 0)):
        bad = int(np.flatnonzero(~(e > 0))[0]) + 1
        raise OverlapError(f"zero propensity for the taken arm at t={bad}")
    with np.errstate(over="raise", invalid="raise"):
        try:
            taken = mu[idx, log.arms]
            scores = np.sum(P * mu, axis=1) + P[idx, log.arms] / e * (log.rewards - taken)
        except FloatingPointError as exc:
            raise OverlapError("importance weights overflowed") from exc
    if not np.all(np.isfinite(scores)):
        raise OverlapError("non-finite doubly robust score")
    return scores


def _target_scores(log, policy, baseline, muhat=None):
    scores = dr_scores(log, policy, muhat)
    if baseline is not None:
        scores = scores - dr_scores(log, baseline, muhat)
    return scores


def _target_name(policy, baseline):
    name = getattr(policy, "name", "policy")
    if baseline is not None:
        name = f"{name}-{getattr(baseline, 'name', 'baseline')}"
    return name


def _combine_uniform_weights(h, scores):
    """Normalised weighted mean and its studentizing variance.

    Weights are rescaled by their maximum first; the estimator is scale
    invariant and constant weights become exactly 1.
    """
    h = np.asarray(h, dtype=float)
    top = h.max() if h.size else 0.0
    if not np.isfinite(top) or top <= 0:
        raise ValueError("adaptive weights are all zero or non-finite")
    h = h / top
    total = np.sum(h)
    point = np.sum(h * scores) / total
    variance = np.sum(h * h * (scores - point) ** 2) / (total * total)
    return float(point), float(variance), h


def estimate_dr(log, policy, baseline=None):
    """Uniformly weighted average of DR scores; variance T^-2 sum (Gamma_t - Q)^2."""
    scores = _target_scores(log, policy, baseline)
    with np.errstate(over="ignore", invalid="ignore"):
        point, variance, h = _combine_uniform_weights(np.ones(log.T), scores)
    if not (np.isfinite(point) and np.isfinite(variance)):
        raise OverlapError("DR is not finite; propensities are too close to zero")
    return WeightedEstimate(point, variance, UNIFORM, h, "DR", _target_name(policy, baseline))


def estimate_ipw(log, policy, baseline=None):
    """DR with a zero outcome model."""
    scores = _target_scores(log, policy, baseline, muhat=0.0)
    point, variance, h = _combine_uniform_weights(np.ones(log.T), scores)
    return WeightedEstimate(point, variance, UNIFORM, h, "IPW", _target_name(policy, baseline))


def estimate_dm(log, policy, final_model, baseline=None):
    """Direct method: average of sum_w mu_hat_T(X_t, w) pi(X_t, w).

    The accompanying variance T^-2 sum (Q - m_t)^2 ignores the bias of the
    outcome model and is flagged as unreliable.
    """
    inputs = log.cells if final_model.input_kind == "cells" else log.contexts
    mu = final_model.predict(inputs)
    P = policy_matrix(policy, log)
    if baseline is not None:
        P = P - policy_matrix(baseline, log)
    values = np.sum(mu * P, axis=1)
    T = log.T
    point = float(np.sum(values) / T)
    variance = float(np.sum((point - values) ** 2) / (T * T))
    return WeightedEstimate(point, variance, None, np.ones(T), "DM", _target_name(policy, baseline),
                            metadata={"variance_unreliable": True})


def proxy_matrix(log, proxy, sq=None):
    """Variance proxy of every batch's snapshot at every logged context.

    Returns V with V[b, s] = sum_w pi^2(X_s, w) / e_b(X_s, w), shape
    (n_batches, T).
    """
    if sq is None:
        sq = proxy.squared_rows(log)
    E = log.snapshot_tables()[:, log.cells]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(sq > 0, sq / E, 0.0)
    return ratio.sum(axis=2)


def _phi(values, phi, proxy_floor):
    return PHI[phi](np.maximum(values, proxy_floor))


def noncontextual_weights(log, proxy, phi, proxy_floor=PROXY_FLOOR, first_batch="pooled"):
    """Feasible non-contextual weights, shape (T,).

    For steps after the first batch,
    h_t = phi((t-1)^-1 sum_{s<t} sum_w pi^2(X_s, w) / e_t(X_s, w)) with e_t the
    snapshot of t's batch.

    The first batch is uniform, so its oracle weight is one constant. With
    ``first_batch="pooled"`` every first-batch step gets phi of the proxy
    averaged over all first-batch contexts; with ``"running"`` the running
    average above is used, with the uniform-propensity proxy at X_1 for t=1.
    The two agree when the first batch has a single step. Pooling matters for
    contrasts, whose proxy is exactly zero wherever the two policies agree: a
    short running average is then often zero and the floored proxy hands a
    few early scores enormous weights.
    """
    if not isinstance(proxy, VarianceProxy):
        proxy = VarianceProxy(proxy)
    if first_batch not in ("pooled", "running"):
        raise ValueError(f"first_batch must be 'pooled' or 'running', got {first_batch!r}")
    T = log.T
    sq = proxy.squared_rows(log)
    V = proxy_matrix(log, proxy, sq)
    b = log.batch_index
    cum = np.cumsum(V, axis=1)
    values = np.empty(T)
    values[0] = log.n_arms * np.sum(sq[0])
    if T > 1:
        t = np.arange(2, T + 1)
        values[1:] = cum[b[1:], t - 2] / (t - 1)
    if first_batch == "pooled":
        n0 = int(log.batch_sizes[0])
        values[:n0] = np.sum(V[0, :n0]) / n0
    return _phi(values, phi, proxy_floor)


@dataclass
class ContextualWeights:
    """h_t(X_s) for every step t and logged context s, stored per batch.

    ``matrix[b, s]`` is the weight of any step of batch ``b`` evaluated at
    the s-th logged context.
    """

    matrix: np.ndarray
    batch_index: np.ndarray
    batch_sizes: np.ndarray

    def diagonal(self):
        """h_t(X_t), shape (T,)."""
        return self.matrix[self.batch_index, np.arange(self.batch_index.size)]

    def at(self, t, s):
        """h_t(X_s) for 1-based t and s."""
        return float(self.matrix[self.batch_index[t - 1], s - 1])

    def scaled(self, c):
        return ContextualWeights(self.matrix * c, self.batch_index, self.batch_sizes)

    def column_sums(self):
        """sum_t h_t(X_s) for every s."""
        return self.batch_sizes @ self.matrix


def contextual_weights(log, proxy, phi, proxy_floor=PROXY_FLOOR):
    """Contextual weights h_t(x) = phi(sum_w pi^2(x, w) / e_t(x, w)) at all logged contexts."""
    if not isinstance(proxy, VarianceProxy):
        proxy = VarianceProxy(proxy)
    V = proxy_matrix(log, proxy)
    return ContextualWeights(_phi(V, phi, proxy_floor), log.batch_index, log.batch_sizes)


def _combine_contextual(weights, scores):
    H = weights.matrix
    top = H.max()
    if not np.isfinite(top) or top <= 0:
        raise ValueError("adaptive weights are all zero or non-finite")
    H = H / top
    if np.all(H == 1.0):
        # constant weights reduce exactly to the uniform average
        point, variance, h = _combine_uniform_weights(np.ones(scores.size), scores)
        return point, variance, h
    w = ContextualWeights(H, weights.batch_index, weights.batch_sizes)
    diag = w.diagonal()
    sums = w.column_sums()
    own = diag / sums * scores
    point = float(np.sum(own))
    # sum_s h_t(X_s) h_s(X_s) / S(X_s)^2 Gamma_s depends on t only through t's batch
    c = diag * scores / (sums * sums)
    cross = (H @ c)[weights.batch_index]
    variance = float(np.sum((own - cross) ** 2))
    return point, variance, diag


def estimate_weighted(log, policy, scheme, baseline=None, weights=None, proxy_floor=PROXY_FLOOR):
    """Adaptively weighted DR estimate with its studentizing variance.

    ``weights`` overrides the computed weights: a length-T vector for the
    non-contextual family or a ``ContextualWeights`` for the contextual one.
    """
    if isinstance(scheme, str):
        scheme = WeightScheme.from_name(scheme)
    scores = _target_scores(log, policy, baseline)
    proxy = VarianceProxy(policy, baseline)
    meta = {"proxy": proxy.kind}
    with np.errstate(over="ignore", invalid="ignore"):
        point, variance, used = _combine(log, scheme, proxy, scores, weights, proxy_floor)
    if scheme.family == "contextual" and not log.space.is_discrete:
        meta["coverage_guarantee"] = False
    if not (np.isfinite(point) and np.isfinite(variance)):
        # extreme inverse propensities overflow instead of producing NaNs
        raise OverlapError(f"{scheme.name} is not finite; propensities are too close to zero")
    return WeightedEstimate(point, variance, scheme, used, scheme.name,
                            _target_name(policy, baseline), metadata=meta)


def _combine(log, scheme, proxy, scores, weights, proxy_floor):
    if scheme.family == "uniform":
        h = np.ones(log.T) if weights is None else weights
        return _combine_uniform_weights(h, scores)
    if scheme.family == "noncontextual":
        if weights is None:
            weights = noncontextual_weights(log, proxy, scheme.phi, proxy_floor)
        return _combine_uniform_weights(weights, scores)
    if weights is None:
        weights = contextual_weights(log, proxy, scheme.phi, proxy_floor)
    return _combine_contextual(weights, scores)


def estimate_contrast(log, policy, baseline, scheme, proxy_floor=PROXY_FLOOR):
    """Estimate Q(policy) - Q(baseline) from differenced scores and the contrast proxy."""
    return estimate_weighted(log, policy, scheme, baseline=baseline, proxy_floor=proxy_floor)


def oracle_noncontextual_weights(env, log, proxy, phi, proxy_floor=PROXY_FLOOR):
    """Infeasible weights phi(E[sum_w pi^2(X, w) / e_t(X, w) | H_{t-1}]) for discrete cells.

    The expectation is the probability-weighted sum over the environment's
    cells, using the snapshot in force at t.
    """
    if not isinstance(proxy, VarianceProxy):
        proxy = VarianceProxy(proxy)
    table = proxy.policy.table
    if proxy.baseline is not None:
        table = table - proxy.baseline.table
    tables = log.snapshot_tables()
    per_batch = np.einsum("c,bc->b", env.cell_probabilities,
                          np.sum(table[None] ** 2 / tables, axis=2))
    return _phi(per_batch[log.batch_index], phi, proxy_floor)


def confidence_interval(est, level=0.95, reference=None):
    """Two-sided normal interval point +/- z * sqrt(variance).

    With ``reference`` also returns the studentized statistic
    (point - reference) / sqrt(variance); a zero variance with
    point != reference yields an infinite statistic and sets the flag.
    """
    level = check_level(level)
    z = norm.ppf(0.5 + level / 2)
    sd = float(np.sqrt(est.variance))
    lo, hi = est.point - z * sd, est.point + z * sd
    if reference is None:
        return ConfidenceInterval(lo, hi, None)
    diff = est.point - reference
    if sd == 0:
        if diff == 0:
            return ConfidenceInterval(lo, hi, 0.0)
        return ConfidenceInterval(lo, hi, float(np.copysign(np.inf, diff)), True)
    return ConfidenceInterval(lo, hi, diff / sd)


class PolicyValueEstimator(BaseEstimator):
    """Scikit-learn style wrapper around the estimators in this module.

    Parameters
    ----------
    method : {'DR', 'IPW', 'DM', 'NC-StableVar', 'NC-MinVar', 'C-StableVar', 'C-MinVar'}
    outcome_model : {'tabular', 'ridge'} or None
        Only used by 'DM'; defaults to the model recorded in the log.
    proxy_floor : float
        Lower bound applied to variance proxies before phi.

    Attributes
    ----------
    estimate_ : WeightedEstimate
    point_, variance_ : float
    weights_ : ndarray
    """

    def __init__(self, method="DR", outcome_model=None, proxy_floor=PROXY_FLOOR):
        self.method = method
        self.outcome_model = outcome_model
        self.proxy_floor = proxy_floor

    def fit(self, log, policy, baseline=None):
        method = self.method
        if method == "DM":
            from .outcome_models import refit_prefix

            kind = self.outcome_model or log.meta.get("outcome_model", "tabular")
            params = log.meta.get("outcome_params", {})
            model = refit_prefix(kind, log, log.T + 1, **params)
            est = estimate_dm(log, policy, model, baseline)
        elif method == "IPW":
            est = estimate_ipw(log, policy, baseline)
        else:
            est = estimate_weighted(log, policy, WeightScheme.from_name(method), baseline,
                                    proxy_floor=self.proxy_floor)
        self.estimate_ = est
        self.point_ = est.point
        self.variance_ = est.variance
        self.weights_ = est.weights
        return self

    def confidence_interval(self, level=0.95, reference=None):
        return confidence_interval(self.estimate_, level, reference)


def estimate(log, policy, method, baseline=None, outcome_model=None):
    """Functional shortcut for ``PolicyValueEstimator(method).fit(...).estimate_``."""
    return PolicyValueEstimator(method, outcome_model).fit(log, policy, baseline).estimate_
