"""
Receding-horizon (look-ahead) control with a grid of equivalence factors

At every grid point j a DP-ECMS is solved over the next N_H stages for
each lambda0 of a grid. The cost-to-go of the full-route DP-ECMS (base
tables) closes the horizon. The lambda0 with the lowest horizon cost is
selected and its first control applied to the plant.

Stage tables (transitions and costs of all cells for all lambda0) only
depend on the stage and the known route, so they are cached and reused
by every horizon covering the stage until the horizon has moved past it
or the known route changes.

"""

import dataclasses
import logging
from dataclasses import dataclass, field
from multiprocessing.pool import ThreadPool
from typing import Dict, List, Tuple

import numpy as np

from pyecodrive.core.dpsystem import (
    NoFeasiblePathError,
    SimulationDivergenceError,
    Trajectory,
)
from pyecodrive.core.route import active_perturbations, apply_perturbations
from pyecodrive.tools import ecms
from pyecodrive.tools.dpsolver import (
    backup,
    final_record,
    pick_controls,
    terminal_table,
    trajectory_record,
    value_lookup,
)
from pyecodrive.tools.edutil import split_chunks
from pyecodrive.tools.spmath import StateVector, stage_cost, transition


@dataclass(frozen=True)
class LookaheadConfig:
    """Horizon length, lambda0 grid and execution options

    Parameters
    ----------
    n_h : int
        Horizon length in stages
    n_lambda : int
        Number of lambda0 values between lam_lo and lam_hi
    lam_lo, lam_hi : float
        Range of the uniform lambda0 grid
    lambdas : tuple, optional
        Explicit ascending lambda0 grid, overrides n_lambda/lam_lo/lam_hi
    stride : int
        Stages applied per horizon solve; stages after the first use a
        one-step re-minimisation on the horizon tables of the selected
        lambda0
    threads : int
        Threads evaluating blocks of the lambda0 grid

    """

    n_h: int = 20
    n_lambda: int = 10
    lam_lo: float = 1.0
    lam_hi: float = 5.0
    lambdas: Tuple[float, ...] = ()
    stride: int = 1
    threads: int = 1

    def __post_init__(self):
        if self.n_h < 1:
            raise ValueError("Horizon must span at least one stage")
        if not 1 <= self.stride <= self.n_h:
            raise ValueError("stride must lie in [1, n_h]")
        if self.threads < 1:
            raise ValueError("threads must be positive")
        grid = self.lambda_grid
        if len(grid) == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
            raise ValueError("lambda0 grid must be positive and strictly ascending")

    @classmethod
    def around(cls, lambda0, n_lambda=10, spread=0.5, **kwargs):
        """Uniform grid of width 2 spread lambda0 holding lambda0 itself

        lambda0 is the middle value (the lower middle one for even
        n_lambda), so the base policy is always among the candidates.
        """
        step = 2 * spread * lambda0 / max(n_lambda - 1, 1)
        middle = (n_lambda - 1) // 2
        lambdas = tuple(float(lambda0 + (i - middle) * step) for i in range(n_lambda))
        return cls(
            n_lambda=n_lambda,
            lam_lo=lambdas[0],
            lam_hi=lambdas[-1],
            lambdas=lambdas,
            **kwargs,
        )

    @property
    def lambda_grid(self):
        if self.lambdas:
            return np.asarray(self.lambdas, dtype=float)
        if self.n_lambda == 1:
            return np.array([0.5 * (self.lam_lo + self.lam_hi)])
        return np.linspace(self.lam_lo, self.lam_hi, self.n_lambda)

    def to_dict(self):
        content = dataclasses.asdict(self)
        content["lambda_grid"] = self.lambda_grid.tolist()
        return content


@dataclass
class HorizonSolution:
    """Horizon values and first controls per lambda0 at grid point j

    tables[i] maps grid points j < k <= end to the horizon value table of
    lambda0 i.
    """

    j: int
    end: int
    lambdas: np.ndarray
    values: np.ndarray
    controls: List[dict]
    tables: List[Dict[int, np.ndarray]] = field(default_factory=list)


class StageTableCache(object):
    """Stage tables of the horizon grid for a block of lambda0 values

    Parameters
    ----------
    ctx : SolveContext
        DP-ECMS context on the known route and the horizon grid
    lambdas : sequence of float

    """

    def __init__(self, ctx, lambdas):
        self.ctx = ctx
        self.lambdas = list(lambdas)
        self._tables = dict()
        self.hits = 0
        self.misses = 0

    def get(self, k):
        """Stage tables of grid point k, one per lambda0"""
        if k in self._tables:
            self.hits += 1
            return self._tables[k]
        self.misses += 1
        ctx = self.ctx
        tables = ecms.dpecms_stage(
            k,
            ctx.grid.e_nodes[k],
            ctx.grid.xi_nodes,
            self.lambdas,
            ctx.route,
            ctx.params,
            ctx.cfg,
            ctx.dpcfg.n_t_pt,
            ctx.ecms_cfg,
            ctx.gamma,
        )
        self._tables[k] = tables
        return tables

    def evict_before(self, j):
        """Drop the tables of grid points k < j"""
        for k in [k for k in self._tables if k < j]:
            del self._tables[k]

    def __len__(self):
        return len(self._tables)


def _horizon_context(base, known_route, grid=None):
    """DP-ECMS context of the horizons on the known route"""
    ctx = base.context
    if grid is None:
        grid = ctx.grid if known_route is ctx.route else ctx.dpcfg.grid(known_route, ctx.cfg)
    return ctx.replace(route=known_route, grid=grid)


def _end_table(base, ctx, end):
    """Values closing a horizon at grid point end, on the horizon grid"""
    grid = ctx.grid
    if end == grid.n_points - 1:
        return terminal_table(grid, ctx.route, ctx.cfg, ctx.soc_tol)
    seen = base.value.with_grid(base.grid.with_route(ctx.route))
    e_nodes = grid.e_nodes[end][:, np.newaxis]
    xi_nodes = grid.xi_nodes[np.newaxis, :]
    return seen.interpolate(end, e_nodes, xi_nodes)


def solve_horizons(j, x, base, cache, n_h):
    """Horizon DP-ECMS for every lambda0 of the cache

    Parameters
    ----------
    j : int
        Current grid point
    x : StateVector
        Actual state at j
    base : PolicyTable
        Full-route DP-ECMS solution closing the horizon
    cache : StageTableCache
    n_h : int
        Horizon length

    Returns
    -------
    HorizonSolution

    """
    ctx = cache.ctx
    grid = ctx.grid
    end = min(j + n_h, grid.n_points - 1)
    mode = ctx.dpcfg.mode
    end_table = _end_table(base, ctx, end)

    n_lam = len(cache.lambdas)
    tables = [{end: end_table} for _ in range(n_lam)]
    lookups = [
        value_lookup(grid, end_table, end, ctx.route, ctx.cfg, ctx.soc_tol, mode)
    ] * n_lam
    for k in range(end - 1, j, -1):
        for i, stage in enumerate(cache.get(k)):
            value, _ = backup(stage, lookups[i])
            tables[i][k] = value
            lookups[i] = value_lookup(grid, value, k, ctx.route, ctx.cfg, ctx.soc_tol, mode)

    first = ecms.dpecms_stage(
        j,
        [x.e],
        [x.xi],
        cache.lambdas,
        ctx.route,
        ctx.params,
        ctx.cfg,
        ctx.dpcfg.n_t_pt,
        ctx.ecms_cfg,
        ctx.gamma,
    )
    values = np.empty(n_lam)
    controls = []
    for i, stage in enumerate(first):
        value, best = backup(stage, lookups[i])
        values[i] = value[0, 0]
        picked = pick_controls(stage, best, value)
        controls.append({name: float(arr[0, 0]) for name, arr in picked.items()})
    return HorizonSolution(
        j=j,
        end=end,
        lambdas=np.asarray(cache.lambdas),
        values=values,
        controls=controls,
        tables=tables,
    )


def horizon_solve(j, x, lambda0, base, route=None, n_h=20, cache=None):
    """Horizon cost and first control for a single lambda0

    Returns
    -------
    tuple
        (horizon cost, first control dict); the cost is INFEASIBLE if the
        horizon has no feasible path

    """
    if cache is None:
        ctx = _horizon_context(base, route if route is not None else base.context.route)
        cache = StageTableCache(ctx, [lambda0])
    sol = solve_horizons(j, x, base, cache, n_h)
    return float(sol.values[0]), sol.controls[0]


def select_lambda(values):
    """Index of the cheapest horizon, ties to the smaller lambda0

    Raises
    ------
    NoFeasiblePathError
        If every horizon is infeasible

    """
    values = np.asarray(values, dtype=float)
    if not np.isfinite(values).any():
        raise NoFeasiblePathError("No lambda0 gives a feasible horizon", tag="lookahead")
    return int(np.argmin(values))


def _merge(solutions):
    first = solutions[0]
    return HorizonSolution(
        j=first.j,
        end=first.end,
        lambdas=np.concatenate([sol.lambdas for sol in solutions]),
        values=np.concatenate([sol.values for sol in solutions]),
        controls=[ctrl for sol in solutions for ctrl in sol.controls],
        tables=[tab for sol in solutions for tab in sol.tables],
    )


def _horizon_control(ctx, sol, i, k, x):
    """One-step re-minimisation on the horizon tables of lambda0 i"""
    lam = float(sol.lambdas[i])
    stage = ecms.dpecms_stage(
        k,
        [x.e],
        [x.xi],
        [lam],
        ctx.route,
        ctx.params,
        ctx.cfg,
        ctx.dpcfg.n_t_pt,
        ctx.ecms_cfg,
        ctx.gamma,
    )[0]
    lookup = value_lookup(
        ctx.grid, sol.tables[i][k + 1], k + 1, ctx.route, ctx.cfg, ctx.soc_tol, ctx.dpcfg.mode
    )
    value, best = backup(stage, lookup)
    if np.isinf(value[0, 0]):
        raise SimulationDivergenceError(k, "lookahead")
    picked = pick_controls(stage, best, value)
    return {name: float(arr[0, 0]) for name, arr in picked.items()}


def receding_horizon_run(
    route, base, gamma=None, la_cfg=None, x_1=None, perturbations=()
):
    """Look-ahead control over the full route

    Parameters
    ----------
    route : Route
        Route before perturbations
    base : PolicyTable
        Full-route DP-ECMS solution (gives params, grids and settings)
    gamma : float, optional
        Must equal the gamma of base
    la_cfg : LookaheadConfig, optional
    x_1 : StateVector, optional
        Start state, default (v_min[0]^2, soc_init)
    perturbations : sequence of Perturbation
        Speed-limit caps known from their activation stage on

    Returns
    -------
    tuple
        (Trajectory with a 'lambda' column, list of (j, lambda0) choices)

    """
    la_cfg = la_cfg or LookaheadConfig()
    if base.solver != "dpecms":
        raise ValueError("Look-ahead needs a DP-ECMS base solution")
    ctx0 = base.context
    if gamma is not None and not np.isclose(gamma, ctx0.gamma):
        raise ValueError(
            "gamma {} differs from the gamma {} of the base tables".format(gamma, ctx0.gamma)
        )
    if route.n_points != ctx0.route.n_points:
        raise ValueError("Route and base tables differ in length")
    lambdas = la_cfg.lambda_grid
    blocks = split_chunks(lambdas, la_cfg.threads)
    n_points = route.n_points
    x = x_1 or StateVector(route.v_min[0] ** 2, ctx0.cfg.soc_init)

    pool = ThreadPool(len(blocks)) if len(blocks) > 1 else None
    mapper = pool.map if pool else map
    records = []
    lam_trace = []
    version = None
    caches = []
    j = 0
    try:
        while j < n_points - 1:
            key = active_perturbations(perturbations, j)
            if key != version:
                known = apply_perturbations(route, perturbations, j)
                ctx = _horizon_context(base, known, ctx0.grid if known == ctx0.route else None)
                caches = [StageTableCache(ctx, block) for block in blocks]
                version = key
                logging.info(
                    "Look-ahead at stage {}: known route with perturbations {}".format(j, key)
                )
            sol = _merge(
                list(mapper(lambda cache: solve_horizons(j, x, base, cache, la_cfg.n_h), caches))
            )
            i = select_lambda(sol.values)
            lam = float(sol.lambdas[i])
            lam_trace.append((j, lam))
            steps = min(la_cfg.stride, n_points - 1 - j)
            for m in range(steps):
                k = j + m
                ctrl = sol.controls[i] if m == 0 else _horizon_control(ctx, sol, i, k, x)
                plant_route = apply_perturbations(route, perturbations, k)
                out = transition(x, ctrl["t_eng"], ctrl["t_bsg"], k, plant_route, ctx0.params, ctx0.cfg)
                if out.tag != 0:
                    raise SimulationDivergenceError(k, out.tag_name())
                row = trajectory_record(
                    k, route, x, out, stage_cost(out, ctx0.gamma, ctx0.cfg.mdot_norm)
                )
                row["lambda"] = lam
                records.append(row)
                x = out.next_state
            j += steps
            for cache in caches:
                cache.evict_before(j)
            if j % 100 == 0:
                logging.debug("Look-ahead reached stage {} (lambda0 = {:.4g})".format(j, lam))
    finally:
        if pool:
            pool.close()
            pool.join()

    last = final_record(route, x)
    last["lambda"] = np.nan
    records.append(last)
    meta = dict(
        solver="lookahead", gamma=ctx0.gamma, n_h=la_cfg.n_h, lambdas=lambdas.tolist()
    )
    logging.info(
        "Look-ahead run finished: {} stages, final SoC {:.4f}".format(n_points - 1, x.xi)
    )
    return Trajectory.from_records(records, name="lookahead", meta=meta), lam_trace
