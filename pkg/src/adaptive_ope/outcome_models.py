"""Outcome regressions mu_hat(x, w) fitted on history strictly before t.

Both models are refit from scratch at batch boundaries, so replaying a
prefix fit reproduces the predictions stored in a log bit for bit.
"""
import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.linear_model import Ridge
from sklearn.utils.validation import check_is_fitted

from .validation import check_fit_inputs

DEFAULT_CLIP = 10.0


class TabularMeanModel(RegressorMixin, BaseEstimator):
    """Per-(cell, arm) sample means; empty cells predict 0.

    Parameters
    ----------
    n_cells : int
        Number of discrete cells.
    n_arms : int
        Number of arms.
    clip : float, default=10.0
        Predictions are clipped to [-clip, clip].
    """

    input_kind = "cells"

    def __init__(self, n_cells=1, n_arms=1, clip=DEFAULT_CLIP):
        self.n_cells = n_cells
        self.n_arms = n_arms
        self.clip = clip

    def fit(self, X, arms, rewards):
        cells, arms, rewards = check_fit_inputs(X, arms, rewards, self.n_arms, features=False)
        flat = cells * self.n_arms + arms
        size = self.n_cells * self.n_arms
        self.counts_ = np.bincount(flat, minlength=size).reshape(self.n_cells, self.n_arms)
        sums = np.bincount(flat, weights=rewards, minlength=size).astype(float)
        sums = sums.reshape(self.n_cells, self.n_arms)
        self.means_ = np.divide(sums, self.counts_, out=np.zeros_like(sums), where=self.counts_ > 0)
        return self

    def predict(self, X):
        """Predicted rewards for every arm, shape (n, n_arms)."""
        check_is_fitted(self, "means_")
        cells = np.asarray(X, dtype=np.int64)
        return np.clip(self.means_[cells], -self.clip, self.clip)


class PerArmRidgeModel(RegressorMixin, BaseEstimator):
    """One ridge regression with intercept per arm.

    The intercept is not penalized. An arm without observations has all
    coefficients at zero.
    """

    input_kind = "features"

    def __init__(self, n_arms=1, alpha=1.0, fit_intercept=True, clip=DEFAULT_CLIP):
        self.n_arms = n_arms
        self.alpha = alpha
        self.fit_intercept = fit_intercept
        self.clip = clip

    def _design(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if self.fit_intercept:
            X = np.hstack([np.ones((X.shape[0], 1)), X])
        return X

    def fit(self, X, arms, rewards):
        X, arms, rewards = check_fit_inputs(X, arms, rewards, self.n_arms)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        # coef_[w] = (intercept, slopes) when fit_intercept, else slopes
        self.coef_ = np.zeros((self.n_arms, X.shape[1] + int(self.fit_intercept)))
        for w in range(self.n_arms):
            mask = arms == w
            if not mask.any():
                continue
            fit = Ridge(alpha=self.alpha, fit_intercept=self.fit_intercept).fit(X[mask],
                                                                                 rewards[mask])
            if self.fit_intercept:
                self.coef_[w] = np.concatenate([[fit.intercept_], fit.coef_])
            else:
                self.coef_[w] = fit.coef_
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return np.clip(self._design(X) @ self.coef_.T, -self.clip, self.clip)


def make_outcome_model(kind, n_arms, n_cells=None, **params):
    if kind == "tabular":
        return TabularMeanModel(n_cells=n_cells, n_arms=n_arms, **params)
    if kind == "ridge":
        return PerArmRidgeModel(n_arms=n_arms, **params)
    raise ValueError(f"unknown outcome model {kind!r}")


def fit_on_prefix(model, log, n):
    """Fit ``model`` on the first ``n`` steps of ``log`` (n may be 0)."""
    inputs = log.cells if model.input_kind == "cells" else log.contexts
    return model.fit(inputs[:n], log.arms[:n], log.rewards[:n])


def refit_prefix(model_kind, log, t, **params):
    """The outcome model in force at step ``t`` (1-based).

    Models are held fixed within a batch, so the fit uses every step before
    the first step of t's batch. ``t = T + 1`` gives the final model trained
    on all T steps, as used by the direct method.
    """
    T = log.T
    if not 1 <= t <= T + 1:
        raise ValueError(f"t must be in 1..{T + 1}")
    if t == T + 1:
        n = T
    else:
        starts = log.batch_starts
        n = int(starts[np.searchsorted(starts, t, side="right") - 1]) - 1
    model = make_outcome_model(model_kind, log.n_arms, n_cells=log.n_cells, **params)
    return fit_on_prefix(model, log, n)


def predict(model, log_or_inputs):
    """Predictions of ``model`` at every logged context, or at raw inputs."""
    if hasattr(log_or_inputs, "cells"):
        log = log_or_inputs
        inputs = log.cells if model.input_kind == "cells" else log.contexts
        return model.predict(inputs)
    return model.predict(log_or_inputs)
