"""
Utility functions for pyecodrive

"""

import json
import logging
import os
import threading
from collections import Counter
from pathlib import Path

import numpy as np

from pyecodrive.core.constants import OUTPUT_DIR_ENV


class EvaluationCounter(object):
    """Thread safe counter of model evaluations

    Two categories are used by the solvers:

        plant: full transition evaluations (one per state/control pair)
        ecms: evaluations of the reduced ECMS slice (one per split
              candidate, shared by all SoC nodes and lambda values)

    """

    def __init__(self):
        self._lock = threading.Lock()
        self._counts = Counter()

    def add(self, category, count=1):
        with self._lock:
            self._counts[category] += int(count)

    def reset(self):
        with self._lock:
            self._counts.clear()

    def __getitem__(self, category):
        with self._lock:
            return self._counts[category]

    def snapshot(self):
        """Current counts as plain dict"""
        with self._lock:
            return dict(self._counts)

    def __repr__(self):
        return "EvaluationCounter({})".format(self.snapshot())


EVAL_COUNTER = EvaluationCounter()


def uniform_grid(lo, hi, num):
    """Uniform grids between (arrays of) lower and upper bounds

    Parameters
    ----------
    lo, hi : float or numpy.array
        Bounds, broadcast against each other
    num : int
        Number of points along the new last axis

    Returns
    -------
    numpy.array
        Shape broadcast(lo, hi).shape + (num,). For num = 1 the lower
        bound is returned. The end points are exact.
    """
    lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
    if num < 1:
        raise ValueError("Grid needs at least one point")
    if num == 1:
        return lo[..., np.newaxis].copy()
    return np.linspace(lo, hi, num, axis=-1)


def insert_node(nodes, value):
    """Replace the node closest to value by value itself

    Keeps the number of nodes and the ordering of an ascending grid.
    """
    nodes = np.array(nodes, dtype=float)
    if value < nodes[0] or value > nodes[-1]:
        raise ValueError("Value {} outside the grid".format(value))
    nodes[np.argmin(np.abs(nodes - value))] = value
    return nodes


def add_nodes(nodes, values, atol=1e-9):
    """Ascending grid with values added as nodes

    A value within atol of an existing node replaces that node.
    """
    nodes = np.array(nodes, dtype=float)
    for value in values:
        close = np.abs(nodes - value) <= atol
        if np.any(close):
            nodes[np.argmax(close)] = value
        else:
            nodes = np.sort(np.append(nodes, value))
    return nodes


def split_chunks(seq, nr_chunks):
    """Split seq into at most nr_chunks contiguous, non-empty lists"""
    seq = list(seq)
    nr_chunks = max(1, min(int(nr_chunks), len(seq)))
    bounds = np.linspace(0, len(seq), nr_chunks + 1).round().astype(int)
    return [seq[bounds[i] : bounds[i + 1]] for i in range(nr_chunks)]


def resolve_output_dir(path=None):
    """Output directory: environment variable, then path, then ./output

    The directory gets created if it does not exist.
    """
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        if path:
            logging.debug(
                "{} set, ignoring output path {}".format(OUTPUT_DIR_ENV, path)
            )
        path = env
    out = Path(path) if path else Path("output")
    out.mkdir(parents=True, exist_ok=True)
    return out


def to_builtin(obj):
    """Convert numpy scalars/arrays and paths for json serialisation"""
    if isinstance(obj, dict):
        return {str(key): to_builtin(val) for key, val in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_builtin(val) for val in obj]
    if isinstance(obj, np.ndarray):
        return to_builtin(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dump_json(content, path):
    """Write content (with numpy values) as indented json"""
    path = Path(path)
    with path.open("w") as jf:
        json.dump(to_builtin(content), jf, indent=4)
    return path
