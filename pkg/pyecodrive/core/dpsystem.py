"""
Data classes of the dynamic programs: state grids, value and policy tables
and simulated trajectories

Classes here hold results; the computations are in pyecodrive.tools.

"""

import logging
from pathlib import Path

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from pyecodrive.core.constants import INFEASIBLE, STORAGE_FORMAT, TRAJECTORY_COLUMNS
from pyecodrive.tools.dpmath import HULL_TOL, interpolate_value
from pyecodrive.tools.edutil import add_nodes, insert_node, uniform_grid


class NoFeasiblePathError(Exception):
    """No control sequence satisfies all constraints, carries the dominant tag"""

    def __init__(self, message, tag=None):
        super().__init__(message)
        self.tag = tag


class SimulationDivergenceError(Exception):
    """A replayed control violates a constraint at the actual state"""

    def __init__(self, stage, tag):
        super().__init__("Constraint '{}' violated at stage {}".format(tag, stage))
        self.stage = stage
        self.tag = tag


class Grid2D(object):
    """Per-stage state grid over (E, xi)

    Parameters
    ----------
    e_nodes : list of numpy.array
        Ascending E nodes per grid point (a single node at points with a
        fixed speed, e.g. stops)
    xi_nodes : numpy.array
        Ascending SoC nodes, shared by all grid points
    masks : list of numpy.array of bool, optional
        Admissible nodes per grid point, all True by default

    """

    def __init__(self, e_nodes, xi_nodes, masks=None):
        self.e_nodes = [np.asarray(nodes, dtype=float) for nodes in e_nodes]
        self.xi_nodes = np.asarray(xi_nodes, dtype=float)
        for nodes in self.e_nodes + [self.xi_nodes]:
            if len(nodes) == 0 or np.any(np.diff(nodes) <= 0):
                raise ValueError("Grid nodes must be non-empty and strictly ascending")
        if masks is None:
            masks = [np.ones(self.shape(k), dtype=bool) for k in range(self.n_points)]
        self.masks = [np.asarray(mask, dtype=bool) for mask in masks]

    @classmethod
    def from_route(cls, route, n_e, n_xi, cfg, soc_span=None, window=False):
        """Uniform grids over the speed envelope and the SoC limits

        E nodes span [v_min^2, v_max^2] with n_e points (one point where
        v_min == v_max), the initial SoC is inserted exactly as a xi node.

        Parameters
        ----------
        soc_span : float, optional
            Restrict the n_xi SoC nodes to soc_init -+ soc_span (within
            the SoC limits)
        window : bool
            Add soc_init -+ soc_tol as extra SoC nodes so that the
            terminal window has interior nodes on coarse grids
        """
        e_nodes = []
        for lo, hi in zip(route.v_min, route.v_max):
            if hi <= lo:
                e_nodes.append(np.array([lo**2]))
            else:
                e_nodes.append(uniform_grid(lo**2, hi**2, n_e))
        xi_lo, xi_hi = cfg.soc_min, cfg.soc_max
        if soc_span is not None:
            xi_lo = max(xi_lo, cfg.soc_init - soc_span)
            xi_hi = min(xi_hi, cfg.soc_init + soc_span)
        xi_nodes = insert_node(uniform_grid(xi_lo, xi_hi, n_xi), cfg.soc_init)
        if window:
            edges = [cfg.soc_init - cfg.soc_tol, cfg.soc_init + cfg.soc_tol]
            xi_nodes = add_nodes(xi_nodes, [xi for xi in edges if xi_lo <= xi <= xi_hi])
        return cls(e_nodes, xi_nodes)

    def with_route(self, route):
        """Same nodes, masks restricted to the speed envelope of route"""
        masks = []
        for k, nodes in enumerate(self.e_nodes):
            e_hi = route.v_max[k] ** 2
            e_lo = route.v_min[k] ** 2
            tol = HULL_TOL * max(e_hi, 1.0)
            ok = (nodes >= e_lo - tol) & (nodes <= e_hi + tol)
            masks.append(np.broadcast_to(ok[:, np.newaxis], self.shape(k)))
        return Grid2D(self.e_nodes, self.xi_nodes, masks)

    @property
    def n_points(self):
        return len(self.e_nodes)

    def shape(self, k):
        return (len(self.e_nodes[k]), len(self.xi_nodes))

    def n_cells(self, k=None):
        if k is None:
            return sum(self.n_cells(kk) for kk in range(self.n_points))
        return self.shape(k)[0] * self.shape(k)[1]

    def xi_index(self, xi):
        """Index of the SoC node equal to xi (exactly)"""
        hits = np.flatnonzero(self.xi_nodes == xi)
        if len(hits) == 0:
            raise ValueError("SoC {} is not a grid node".format(xi))
        return int(hits[0])

    def __repr__(self):
        return "Grid2D(n_points={}, n_xi={}, n_cells={})".format(
            self.n_points, len(self.xi_nodes), self.n_cells()
        )


class ValueTable(object):
    """Cost-to-go per grid point, INFEASIBLE for infeasible cells"""

    def __init__(self, grid, tables, mode="interp", name=""):
        self.grid = grid
        self.tables = [np.asarray(tab, dtype=float) for tab in tables]
        self.mode = mode
        self.name = name
        for k, tab in enumerate(self.tables):
            if tab.shape != grid.shape(k):
                raise ValueError(
                    "Value table at {} has shape {}, grid {}".format(
                        k, tab.shape, grid.shape(k)
                    )
                )

    def __getitem__(self, k):
        return self.tables[k]

    def __len__(self):
        return len(self.tables)

    def masked(self, k):
        return np.where(self.grid.masks[k], self.tables[k], INFEASIBLE)

    def interpolate(self, k, e, xi, mode=None):
        """Value at off-grid states of grid point k"""
        return interpolate_value(
            self.masked(k),
            self.grid.e_nodes[k],
            self.grid.xi_nodes,
            e,
            xi,
            mode=mode or self.mode,
        )

    def with_grid(self, grid):
        """Same values seen through another grid (masks)"""
        return ValueTable(grid, self.tables, mode=self.mode, name=self.name)

    def start_value(self, x):
        """Optimal cost from state x at the first grid point

        Raises
        ------
        NoFeasiblePathError
            If the value is INFEASIBLE

        """
        value = float(self.interpolate(0, x.e, x.xi))
        if np.isinf(value):
            raise NoFeasiblePathError(
                "No feasible path from v = {:.3f} m/s, soc = {:.4f}".format(x.v, x.xi),
                tag="start",
            )
        return value

    def feasible_fraction(self, k):
        return float(np.mean(np.isfinite(self.tables[k])))

    def to_frame(self):
        """Long format table with columns k, i, j, E, xi, J"""
        frames = []
        for k, tab in enumerate(self.tables):
            ii, jj = np.meshgrid(
                np.arange(tab.shape[0]), np.arange(tab.shape[1]), indexing="ij"
            )
            frames.append(
                pd.DataFrame(
                    {
                        "k": k,
                        "i": ii.ravel(),
                        "j": jj.ravel(),
                        "E": self.grid.e_nodes[k][ii.ravel()],
                        "xi": self.grid.xi_nodes[jj.ravel()],
                        "J": tab.ravel(),
                    }
                )
            )
        return pd.concat(frames, ignore_index=True)

    def save(self, path, float_format="%.12g"):
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format=float_format)
        logging.info("Value table saved to {}".format(path))
        return path


class PolicyTable(object):
    """Optimal controls per grid cell (NaN where infeasible)

    Parameters
    ----------
    solver : str
        'benchmark' or 'dpecms'
    controls : dict
        Control name (t_eng, t_bsg, t_pt) to list of per-stage arrays
    value : ValueTable
    context : object
        Problem definition the policy was computed for (route, params,
        configs, gamma); used for replay

    """

    def __init__(self, solver, controls, value, context):
        self.solver = solver
        self.controls = controls
        self.value = value
        self.context = context

    @property
    def grid(self):
        return self.value.grid

    def __getitem__(self, name):
        return self.controls[name]

    def __repr__(self):
        return "PolicyTable(solver={}, stages={})".format(
            self.solver, len(self.controls["t_pt"])
        )


class Trajectory(object):
    """Simulated trip, one row per grid point

    The last row holds the final state with NaN controls and zero fuel,
    time and cost.

    Parameters
    ----------
    data : pandas.DataFrame
        Columns as TRAJECTORY_COLUMNS, optionally 'lambda'
    name : str, optional
    meta : dict, optional
        Solver details (gamma, lambda0, ...)

    """

    def __init__(self, data, name="", meta=None):
        missing = [col for col in TRAJECTORY_COLUMNS if col not in data.columns]
        if missing:
            raise ValueError("Trajectory columns missing: {}".format(missing))
        self.data = data
        self.name = name
        self.meta = meta or dict()

    @classmethod
    def from_records(cls, records, name="", meta=None):
        data = pd.DataFrame.from_records(records)
        cols = TRAJECTORY_COLUMNS + [col for col in data.columns if col not in TRAJECTORY_COLUMNS]
        return cls(data[cols], name=name, meta=meta)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return "Trajectory({}, points={}, fuel={:.4f} kg, time={:.1f} s)".format(
            self.name, len(self), self.fuel_total, self.time_total
        )

    @property
    def fuel_total(self):
        return float(self.data.fuel_kg.sum())

    @property
    def time_total(self):
        return float(self.data.t_s.sum())

    @property
    def cost_total(self):
        return float(self.data.cost.sum())

    @property
    def soc_start(self):
        return float(self.data.soc.iloc[0])

    @property
    def soc_end(self):
        return float(self.data.soc.iloc[-1])

    @property
    def cumulative(self):
        """Prefix sums of fuel, time and cost over the grid points"""
        cum = self.data[["fuel_kg", "t_s", "cost"]].cumsum()
        cum.insert(0, "d_m", self.data.d_m)
        return cum

    def save(self, path, table_format="txt", float_format="%.12g"):
        """Save the trajectory table

        Parameters
        ----------
        path : pathlib.Path or string
            File name; the parent folder is created if necessary
        table_format : string
            'txt' (csv, default, alias 'csv') or 'parquet' (alias 'par')
        float_format : string, optional
            Format for txt files, default '%.12g'

        """
        for format_key, format_extension in STORAGE_FORMAT.items():
            if table_format.lower() in format_extension:
                table_format = format_key
                break
        else:
            raise ValueError(
                'Unknown table format "{}" - must be "txt", "parquet" or an alias as '
                "defined in STORAGE_FORMAT".format(table_format)
            )
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if table_format == "txt":
            self.data.to_csv(path, index=False, float_format=float_format)
        else:
            self.data.to_parquet(path)
        logging.info("Trajectory saved to {}".format(path))
        return path

    def plot(self, route=None, file_name=None, file_dpi=300):
        """Speed (with the route envelope) and SoC over distance

        Returns
        -------
        numpy.array of matplotlib axes

        """
        fig, axes = plt.subplots(2, 1, sharex=True, figsize=(8, 5))
        if route is not None:
            axes[0].fill_between(
                route.d, route.v_min, route.v_max, color="0.9", label="speed envelope"
            )
        axes[0].plot(self.data.d_m, self.data.v_mps, label=self.name or "trajectory")
        axes[0].set_ylabel("speed (m/s)")
        axes[0].legend(loc="best")
        axes[1].plot(self.data.d_m, self.data.soc)
        axes[1].set_ylabel("SoC (-)")
        axes[1].set_xlabel("distance (m)")
        if file_name:
            fig.savefig(file_name, dpi=file_dpi)
        return axes
