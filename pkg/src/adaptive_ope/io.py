"""Line-delimited bandit log files.

Layout::

    # adaptive-ope-log 1
    # {"T": ..., "K": ..., "space": ..., "batches": [[start, end], ...], "snapshots": [...]}
    t,cell,context,arm,reward,e_0,...,e_{K-1},muhat_0,...,muhat_{K-1}
    1,3,3,0,0.51,...

Snapshot tables are stored arm-major (K rows, one column per cell).
Continuous contexts are written as ``x_0..x_{d-1}`` columns instead of
``context``. Floats are written with ``repr`` so a round trip is exact.
"""
import csv
import json

import numpy as np

from .core import BanditLog, ContextSpace, PropensitySnapshot, cell_map_from_dict

MAGIC = "# adaptive-ope-log 1"


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def save_log(log, path):
    with open(path, "w", newline="") as fh:
        write_log(log, fh)


def write_log(log, fh):
    """Write ``log`` to an open text stream."""
    K = log.n_arms
    header = {
        "T": log.T,
        "K": K,
        "n_cells": log.n_cells,
        "space": log.space.to_dict(),
        "cell_map": None if log.cell_map is None else log.cell_map.to_dict(),
        "batches": [[s.start, s.end] for s in log.snapshots],
        "floor_values": [s.floor_value for s in log.snapshots],
        "floor": log.floor,
        "meta": _to_jsonable(log.meta),
        "snapshots": [s.table.T.tolist() for s in log.snapshots],
    }
    discrete = log.space.is_discrete
    ctx_cols = ["context"] if discrete else [f"x_{j}" for j in range(log.space.dim)]
    columns = (["t", "cell"] + ctx_cols + ["arm", "reward"]
               + [f"e_{w}" for w in range(K)] + [f"muhat_{w}" for w in range(K)])
    fh.write(MAGIC + "\n")
    fh.write("# " + json.dumps(header) + "\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    contexts = log.contexts.reshape(log.T, -1)
    for i in range(log.T):
        ctx = [int(contexts[i, 0])] if discrete else [repr(float(v)) for v in contexts[i]]
        writer.writerow(
            [i + 1, int(log.cells[i])] + ctx + [int(log.arms[i]), repr(float(log.rewards[i]))]
            + [repr(float(v)) for v in log.propensities[i]]
            + [repr(float(v)) for v in log.muhat[i]]
        )


def load_log(path, validate=True):
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != MAGIC:
            raise ValueError(f"{path} is not an adaptive-ope log file")
        header = json.loads(fh.readline()[2:])
        reader = csv.reader(fh)
        columns = next(reader)
        rows = [r for r in reader if r]
    K = header["K"]
    data = np.array(rows, dtype=float).reshape(len(rows), len(columns))
    col = {name: j for j, name in enumerate(columns)}
    space = ContextSpace.from_dict(header["space"])
    cells = data[:, col["cell"]].astype(np.int64)
    if space.is_discrete:
        contexts = data[:, col["context"]].astype(np.int64)
    else:
        contexts = data[:, [col[f"x_{j}"] for j in range(space.dim)]]
    cell_map = cell_map_from_dict(header["cell_map"]) if header.get("cell_map") else None
    snapshots = [
        PropensitySnapshot(b, start, end, np.array(table, dtype=float).T.copy(), floor_value,
                           cell_map)
        for b, ((start, end), table, floor_value) in enumerate(
            zip(header["batches"], header["snapshots"], header["floor_values"]))
    ]
    log = BanditLog(
        contexts=contexts,
        cells=cells,
        arms=data[:, col["arm"]].astype(np.int64),
        rewards=data[:, col["reward"]],
        propensities=data[:, [col[f"e_{w}"] for w in range(K)]],
        muhat=data[:, [col[f"muhat_{w}"] for w in range(K)]],
        snapshots=snapshots,
        space=space,
        n_arms=K,
        n_cells=header["n_cells"],
        cell_map=cell_map,
        floor=header.get("floor", {}),
        meta=header.get("meta", {}),
    )
    if log.T != header["T"]:
        raise ValueError(f"{path} declares T={header['T']} but holds {log.T} records")
    if validate:
        log.validate()
    return log
