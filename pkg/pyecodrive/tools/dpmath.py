"""
Value table arithmetic for the spatial dynamic programs

Functions for evaluating stored value tables off-grid and the terminal
cost. Infeasible cells carry the +inf sentinel (INFEASIBLE); it is always
detected with np.isinf before any arithmetic so that it never mixes into
finite values.

"""

import numpy as np

from pyecodrive.core.constants import INFEASIBLE

# relative tolerance of the grid hull test
HULL_TOL = 1e-9


def _hull_tol(nodes):
    return HULL_TOL * max(abs(nodes[0]), abs(nodes[-1]), 1.0)


def in_hull(nodes, x):
    """True where x lies within [nodes[0], nodes[-1]] (with tolerance)"""
    tol = _hull_tol(nodes)
    return (x >= nodes[0] - tol) & (x <= nodes[-1] + tol)


def nearest_node(nodes, x):
    """Index of the nearest node, ties to the lower node"""
    nodes = np.asarray(nodes, dtype=float)
    x = np.asarray(x, dtype=float)
    if len(nodes) == 1:
        return np.zeros(x.shape, dtype=int)
    upper = np.clip(np.searchsorted(nodes, x, side="left"), 1, len(nodes) - 1)
    lower = upper - 1
    take_lower = (x - nodes[lower]) <= (nodes[upper] - x)
    return np.where(take_lower, lower, upper)


def bracket(nodes, x):
    """Lower bracketing node and the linear weight of the upper one

    x must already be clipped to the node range. A value on a node gets
    weight 0 (or weight 1 on the last node).
    """
    nodes = np.asarray(nodes, dtype=float)
    x = np.asarray(x, dtype=float)
    if len(nodes) == 1:
        return np.zeros(x.shape, dtype=int), np.zeros(x.shape)
    lower = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, len(nodes) - 2)
    weight = (x - nodes[lower]) / (nodes[lower + 1] - nodes[lower])
    return lower, np.clip(weight, 0.0, 1.0)


def snap_to_grid(e_nodes, xi_nodes, e, xi):
    """Nearest node indices and the hull mask of states (E, xi)"""
    inside = in_hull(e_nodes, e) & in_hull(xi_nodes, xi)
    return nearest_node(e_nodes, e), nearest_node(xi_nodes, xi), inside


def interpolate_value(table, e_nodes, xi_nodes, e, xi, mode="interp"):
    """Value at off-grid states (E, xi)

    Parameters
    ----------
    table : numpy.array
        Values at the nodes, shape (len(e_nodes), len(xi_nodes))
    e_nodes, xi_nodes : numpy.array
        Strictly ascending node coordinates
    e, xi : float or numpy.array
        Query states, broadcast against each other
    mode : str, optional
        'interp' (bilinear, default) or 'nearest'

    Returns
    -------
    numpy.array
        Interpolated values. States outside the grid hull and states with
        an infeasible corner of positive weight get INFEASIBLE; corners of
        zero weight are ignored, so on-node queries return the node value.

    """
    table = np.asarray(table, dtype=float)
    e_nodes = np.asarray(e_nodes, dtype=float)
    xi_nodes = np.asarray(xi_nodes, dtype=float)
    e, xi = np.broadcast_arrays(np.asarray(e, dtype=float), np.asarray(xi, dtype=float))
    inside = in_hull(e_nodes, e) & in_hull(xi_nodes, xi)
    e_c = np.clip(e, e_nodes[0], e_nodes[-1])
    xi_c = np.clip(xi, xi_nodes[0], xi_nodes[-1])

    if mode == "nearest":
        value = table[nearest_node(e_nodes, e_c), nearest_node(xi_nodes, xi_c)]
        return np.where(inside, value, INFEASIBLE)
    if mode != "interp":
        raise ValueError('Unknown interpolation mode "{}"'.format(mode))

    i0, we = bracket(e_nodes, e_c)
    j0, wx = bracket(xi_nodes, xi_c)
    i1 = np.minimum(i0 + 1, len(e_nodes) - 1)
    j1 = np.minimum(j0 + 1, len(xi_nodes) - 1)

    value = np.zeros(e.shape)
    blocked = ~inside
    for weight, corner in (
        ((1 - we) * (1 - wx), table[i0, j0]),
        (we * (1 - wx), table[i1, j0]),
        ((1 - we) * wx, table[i0, j1]),
        (we * wx, table[i1, j1]),
    ):
        active = weight > 0
        infeasible = np.isinf(corner)
        blocked |= active & infeasible
        value += np.where(active & ~infeasible, weight * np.where(infeasible, 0.0, corner), 0.0)
    return np.where(blocked, INFEASIBLE, value)


def terminal_cost(e, xi, xi_target, tol, e_bounds=None):
    """Terminal cost: 0 inside the SoC window (and speed bounds), else INFEASIBLE

    Parameters
    ----------
    e, xi : float or numpy.array
        Terminal states
    xi_target : float
        Target state of charge
    tol : float
        Inclusive tolerance |xi - xi_target| <= tol; np.inf disables the
        SoC condition
    e_bounds : tuple, optional
        Inclusive (E_min, E_max) at the last grid point

    """
    e, xi = np.broadcast_arrays(np.asarray(e, dtype=float), np.asarray(xi, dtype=float))
    ok = np.abs(xi - xi_target) <= tol + 1e-12
    if e_bounds is not None:
        e_lo, e_hi = e_bounds
        e_tol = HULL_TOL * max(abs(e_hi), 1.0)
        ok &= (e >= e_lo - e_tol) & (e <= e_hi + e_tol)
    return np.where(ok, 0.0, INFEASIBLE)
