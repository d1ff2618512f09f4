"""Input validation helpers shared by the estimators, agents and loaders."""
import numpy as np
from sklearn.utils import check_array

SIMPLEX_ATOL = 1e-12
LOGGED_SIMPLEX_ATOL = 1e-10


def check_simplex(p, name="p", atol=SIMPLEX_ATOL):
    """Validate a probability vector or a matrix of row-wise probability vectors.

    Returns the input as a float ndarray. Raises ``ValueError`` when an entry
    is outside [0, 1] or a row does not sum to one within ``atol``.
    """
    arr = np.asarray(p, dtype=float)
    if arr.ndim not in (1, 2) or arr.shape[-1] == 0:
        raise ValueError(f"{name} must be a non-empty vector or matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(arr < -atol) or np.any(arr > 1 + atol):
        raise ValueError(f"{name} has entries outside [0, 1]")
    sums = arr.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > atol):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(f"{name} rows must sum to 1 (max deviation {worst:.3g})")
    return arr


def check_policy_matrix(probs, n_arms=None, name="policy"):
    arr = check_array(probs, ensure_2d=True, dtype=float)
    if n_arms is not None and arr.shape[1] != n_arms:
        raise ValueError(f"{name} has {arr.shape[1]} arms, expected {n_arms}")
    return check_simplex(arr, name=name)


def check_arms(arms, n_arms, name="arms"):
    arr = np.asarray(arms)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if arr.size and (not np.issubdtype(arr.dtype, np.integer)):
        if not np.all(arr == np.floor(arr)):
            raise ValueError(f"{name} must contain integer arm ids")
        arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= n_arms):
        raise ValueError(f"{name} must lie in 0..{n_arms - 1}")
    return arr.astype(np.int64, copy=False)


def check_fit_inputs(X, arms, rewards, n_arms, features=True):
    """Validate the (inputs, arms, rewards) triple consumed by the per-arm models."""
    arms = check_arms(arms, n_arms)
    rewards = np.asarray(rewards, dtype=float)
    if rewards.shape != arms.shape:
        raise ValueError("arms and rewards must have the same length")
    if features:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.shape[0] != arms.shape[0]:
            raise ValueError("X and arms must have the same number of rows")
    else:
        X = np.asarray(X, dtype=np.int64)
        if X.shape != arms.shape:
            raise ValueError("cells and arms must have the same length")
    return X, arms, rewards


def check_level(level):
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must be in (0, 1), got {level}")
    return float(level)
