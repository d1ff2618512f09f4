"""Builders for small hand-made logs."""
import numpy as np

from adaptive_ope.core import BanditLog, ContextSpace, IdentityCells, PropensitySnapshot


def make_log(cells, arms, rewards, tables, bounds, muhat=None, probabilities=None):
    """Discrete log from explicit per-batch tables.

    ``tables[b]`` has shape (n_cells, K); ``bounds[b]`` is the 1-based
    inclusive (start, end) of batch b.
    """
    cells = np.asarray(cells, dtype=np.int64)
    tables = [np.asarray(t, dtype=float) for t in tables]
    n_cells, K = tables[0].shape
    T = cells.size
    if probabilities is None:
        probabilities = np.full(n_cells, 1.0 / n_cells)
    cell_map = IdentityCells(n_cells)
    snaps = [PropensitySnapshot(b, s, e, tab, float(tab.min()), cell_map)
             for b, ((s, e), tab) in enumerate(zip(bounds, tables))]
    batch = np.repeat(np.arange(len(bounds)), [e - s + 1 for s, e in bounds])
    props = np.stack([tables[b][c] for b, c in zip(batch, cells)])
    mu = np.zeros((T, K)) if muhat is None else np.asarray(muhat, dtype=float)
    return BanditLog(
        contexts=cells.copy(), cells=cells, arms=np.asarray(arms, dtype=np.int64),
        rewards=np.asarray(rewards, dtype=float), propensities=props, muhat=mu,
        snapshots=snaps, space=ContextSpace.discrete(probabilities), n_arms=K, n_cells=n_cells,
        cell_map=cell_map,
    )


def uniform_log(rng, T, n_cells, K, batch_size, muhat=True):
    """A log whose every snapshot is uniform."""
    cells = rng.integers(0, n_cells, T)
    arms = rng.integers(0, K, T)
    rewards = rng.normal(size=T)
    nb = T // batch_size
    bounds = [(1 + b * batch_size, (b + 1) * batch_size) for b in range(nb)]
    bounds[-1] = (bounds[-1][0], T)
    tables = [np.full((n_cells, K), 1.0 / K)] * nb
    mu = rng.normal(size=(T, K)) if muhat else None
    return make_log(cells, arms, rewards, tables, bounds, mu)


def random_adaptive_log(rng, T, n_cells, K, batch_size):
    """A log with random floored snapshots and random predictions."""
    cells = rng.integers(0, n_cells, T)
    nb = T // batch_size
    bounds = [(1 + b * batch_size, (b + 1) * batch_size) for b in range(nb)]
    bounds[-1] = (bounds[-1][0], T)
    tables = [np.full((n_cells, K), 1.0 / K)]
    for _ in range(nb - 1):
        tables.append(0.5 * rng.dirichlet(np.ones(K), size=n_cells) + 0.5 / K)
    batch = np.repeat(np.arange(nb), [e - s + 1 for s, e in bounds])
    arms = np.array([rng.choice(K, p=tables[b][c]) for b, c in zip(batch, cells)])
    rewards = rng.normal(size=T)
    return make_log(cells, arms, rewards, tables, bounds, rng.normal(size=(T, K)))
