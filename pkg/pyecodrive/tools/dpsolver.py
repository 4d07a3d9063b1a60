"""
Backward dynamic programming on the spatial grid and forward replay

Two solvers share the recursion J_k(x) = min_u g_k(x, u) + J_k+1(x'):

    benchmark: full search over engine and BSG torque
    dpecms:    search over the powertrain torque only, the split is the
               ECMS minimiser for a fixed lambda0

Each stage is computed for all cells at once (vectorised over the cells,
optionally in blocks of E nodes on a thread pool); stage k+1 is completed
before stage k starts.

"""

import dataclasses
import logging
from dataclasses import dataclass
from functools import partial
from multiprocessing.pool import ThreadPool
from typing import Optional

import numpy as np

from pyecodrive.core.constants import INFEASIBLE
from pyecodrive.core.dpsystem import (
    Grid2D,
    NoFeasiblePathError,
    PolicyTable,
    SimulationDivergenceError,
    Trajectory,
    ValueTable,
)
from pyecodrive.core.route import Route
from pyecodrive.tools import ecms
from pyecodrive.tools.dpmath import bracket, interpolate_value, nearest_node, terminal_cost
from pyecodrive.tools.edutil import split_chunks
from pyecodrive.tools.spmath import (
    CONSTRAINT_TAGS,
    ProblemConfig,
    StateVector,
    benchmark_stage,
    stage_cost,
    transition,
)
from pyecodrive.tools.vehicle import VehicleParams

__all__ = [
    "DPConfig",
    "SolveContext",
    "NoFeasiblePathError",
    "SimulationDivergenceError",
    "backward_solve_benchmark",
    "backward_solve_dpecms",
    "forward_simulate",
    "backup",
    "interpolate_value",
    "terminal_cost",
]

MODES = ("interp", "nearest")
REPLAY = ("bellman", "policy")


@dataclass(frozen=True)
class DPConfig:
    """Grid sizes and options of the backward solve

    Parameters
    ----------
    n_e, n_xi : int
        Number of E and SoC nodes
    n_t_eng, n_t_bsg : int
        Engine and BSG torque candidates of the benchmark
    n_t_pt : int
        Powertrain torque candidates of the DP-ECMS
    mode : str
        'interp' (bilinear) or 'nearest' evaluation of the next value
    soc_terminal : bool
        Apply the terminal SoC window (otherwise only the SoC limits hold)
    soc_span : float, optional
        SoC nodes cover soc_init -+ soc_span instead of the SoC limits
    window_nodes : bool
        Add the edges of the terminal SoC window as SoC nodes
    replay : str
        Default lookup of forward_simulate: 'policy' (stored controls) or
        'bellman' (one-step re-minimisation)
    threads : int
        Threads for the cell blocks of one stage
    log_every : int
        Stage interval of the progress debug messages

    """

    n_e: int = 25
    n_xi: int = 51
    n_t_eng: int = 15
    n_t_bsg: int = 11
    n_t_pt: int = 25
    mode: str = "interp"
    soc_terminal: bool = True
    soc_span: Optional[float] = None
    window_nodes: bool = False
    replay: str = "policy"
    threads: int = 1
    log_every: int = 100

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError("mode must be one of {}".format(MODES))
        if self.replay not in REPLAY:
            raise ValueError("replay must be one of {}".format(REPLAY))
        if min(self.n_e, self.n_xi, self.n_t_eng, self.n_t_bsg, self.n_t_pt) < 1:
            raise ValueError("Grid sizes must be positive")
        if self.soc_span is not None and not self.soc_span > 0:
            raise ValueError("soc_span must be positive")
        if self.threads < 1:
            raise ValueError("threads must be positive")

    @classmethod
    def benchmark(cls, **kwargs):
        """Settings of the benchmark DP (fine SoC grid, hard terminal SoC)"""
        content = dict(window_nodes=True)
        content.update(kwargs)
        return cls(**content)

    @classmethod
    def dpecms(cls, **kwargs):
        """Settings of the DP-ECMS

        A coarse SoC grid around the initial SoC with the terminal window
        edges as extra nodes; the window is kept hard, lambda0 is tuned
        with it released (see pyecodrive.tools.lambdatuning.shoot).
        """
        content = dict(n_xi=11, soc_span=0.05, window_nodes=True)
        content.update(kwargs)
        return cls(**content)

    def grid(self, route, cfg):
        """State grid of these settings on route"""
        return Grid2D.from_route(
            route, self.n_e, self.n_xi, cfg, soc_span=self.soc_span, window=self.window_nodes
        )

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class SolveContext:
    """Everything a policy was computed for"""

    solver: str
    route: Route
    grid: Grid2D
    params: VehicleParams
    cfg: ProblemConfig
    dpcfg: DPConfig
    gamma: float
    ecms_cfg: Optional[ecms.EcmsConfig] = None

    @property
    def soc_tol(self):
        return self.cfg.soc_tol if self.dpcfg.soc_terminal else np.inf

    @property
    def lambda0(self):
        return self.ecms_cfg.lambda0 if self.ecms_cfg else None

    def start_state(self):
        return StateVector(self.route.v_min[0] ** 2, self.cfg.soc_init)

    def stage(self, k, e_nodes, xi_nodes):
        """Stage table of the solver for the given cells"""
        if self.solver == "benchmark":
            return benchmark_stage(
                k,
                e_nodes,
                xi_nodes,
                self.route,
                self.params,
                self.cfg,
                self.dpcfg.n_t_eng,
                self.dpcfg.n_t_bsg,
                self.gamma,
            )
        return ecms.dpecms_stage(
            k,
            e_nodes,
            xi_nodes,
            [self.ecms_cfg.lambda0],
            self.route,
            self.params,
            self.cfg,
            self.dpcfg.n_t_pt,
            self.ecms_cfg,
            self.gamma,
        )[0]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def terminal_table(grid, route, cfg, tol):
    """Terminal cost at the nodes of the last grid point"""
    e_bounds = (route.v_min[-1] ** 2, route.v_max[-1] ** 2)
    return terminal_cost(
        grid.e_nodes[-1][:, np.newaxis], grid.xi_nodes[np.newaxis, :], cfg.soc_init, tol, e_bounds
    )


def value_lookup(grid, table, k, route, cfg, tol, mode):
    """Callable (E, xi) -> value at grid point k

    The transition into the last grid point evaluates the terminal cost
    directly at the next state in 'interp' mode.
    """
    if k == grid.n_points - 1 and mode == "interp":
        e_bounds = (route.v_min[-1] ** 2, route.v_max[-1] ** 2)
        return partial(_terminal_at, xi_target=cfg.soc_init, tol=tol, e_bounds=e_bounds)
    masked = np.where(grid.masks[k], table, INFEASIBLE)
    return partial(
        interpolate_value, masked, grid.e_nodes[k], grid.xi_nodes, mode=mode
    )


def _terminal_at(e, xi, xi_target, tol, e_bounds):
    return terminal_cost(e, xi, xi_target, tol, e_bounds)


def backup(stage, next_value):
    """Bellman backup of one stage table

    Parameters
    ----------
    stage : StageTable
    next_value : callable
        (E', xi') -> value at the next grid point

    Returns
    -------
    tuple
        (value per cell, index of the minimising control per cell); cells
        without a finite candidate get INFEASIBLE. Ties go to the lowest
        control index.

    """
    shape = stage.shape
    ok = stage.tag == 0
    nxt = np.full(shape, INFEASIBLE)
    nxt[ok] = next_value(
        np.broadcast_to(stage.e_next, shape)[ok], np.broadcast_to(stage.xi_next, shape)[ok]
    )
    total = np.full(shape, INFEASIBLE)
    finite = np.isfinite(nxt)
    total[finite] = np.broadcast_to(stage.cost, shape)[finite] + nxt[finite]
    best = np.argmin(total, axis=-1)
    value = np.take_along_axis(total, best[..., np.newaxis], axis=-1)[..., 0]
    return value, best


def pick_controls(stage, best, value):
    """Controls of the minimising candidates, NaN for infeasible cells"""
    picked = dict()
    for name, arr in stage.controls.items():
        full = np.broadcast_to(arr, stage.shape)
        sel = np.take_along_axis(full, best[..., np.newaxis], axis=-1)[..., 0]
        picked[name] = np.where(np.isfinite(value), sel, np.nan)
    return picked


def dominant_tag(stage, cell=None):
    """Most frequent constraint tag among the candidates (of one cell)"""
    tags = np.asarray(stage.tag if cell is None else stage.tag[cell]).ravel()
    tags = tags[tags > 0]
    if len(tags) == 0:
        return "unreachable"
    return CONSTRAINT_TAGS[int(np.bincount(tags).argmax())]


def _solve_block(ctx, k, next_value, e_idx):
    stage = ctx.stage(k, ctx.grid.e_nodes[k][e_idx], ctx.grid.xi_nodes)
    value, best = backup(stage, next_value)
    return value, pick_controls(stage, best, value)


def _backward_solve(ctx):
    grid = ctx.grid
    n_points = grid.n_points
    if n_points != ctx.route.n_points:
        raise ValueError("Grid and route have a different number of points")
    tables = [None] * n_points
    tables[-1] = terminal_table(grid, ctx.route, ctx.cfg, ctx.soc_tol)
    names = ("t_eng", "t_bsg", "t_pt")
    controls = {name: [None] * (n_points - 1) for name in names}

    pool = ThreadPool(ctx.dpcfg.threads) if ctx.dpcfg.threads > 1 else None
    mapper = pool.map if pool else map
    try:
        for k in range(n_points - 2, -1, -1):
            next_value = value_lookup(
                grid, tables[k + 1], k + 1, ctx.route, ctx.cfg, ctx.soc_tol, ctx.dpcfg.mode
            )
            blocks = split_chunks(range(len(grid.e_nodes[k])), ctx.dpcfg.threads)
            results = list(mapper(partial(_solve_block, ctx, k, next_value), blocks))
            tables[k] = np.concatenate([res[0] for res in results], axis=0)
            for name in names:
                controls[name][k] = np.concatenate([res[1][name] for res in results], axis=0)
            if k % ctx.dpcfg.log_every == 0:
                logging.debug(
                    "{} stage {}: {:.1%} feasible cells".format(
                        ctx.solver, k, np.mean(np.isfinite(tables[k]))
                    )
                )
    finally:
        if pool:
            pool.close()
            pool.join()

    value = ValueTable(grid, tables, mode=ctx.dpcfg.mode, name=ctx.solver)
    logging.info(
        "{} DP solved: {} stages, {} cells per stage, gamma = {}".format(
            ctx.solver, n_points - 1, grid.n_cells(0), ctx.gamma
        )
    )
    return value, PolicyTable(ctx.solver, controls, value, ctx)


def backward_solve_benchmark(
    route, grid=None, dpcfg=None, gamma=0.65, params=None, cfg=None
):
    """Benchmark DP over engine and BSG torque

    Parameters
    ----------
    route : Route
    grid : Grid2D, optional
        Built from the route envelope and dpcfg if not given
    dpcfg : DPConfig, optional
        Default DPConfig.benchmark()
    gamma : float
        Fuel/time weight in [0, 1]
    params : VehicleParams, optional
    cfg : ProblemConfig, optional

    Returns
    -------
    tuple
        (ValueTable, PolicyTable)

    """
    params = params or VehicleParams()
    cfg = cfg or ProblemConfig()
    dpcfg = dpcfg or DPConfig.benchmark()
    grid = grid or dpcfg.grid(route, cfg)
    _check_gamma(gamma)
    ctx = SolveContext("benchmark", route, grid, params, cfg, dpcfg, gamma)
    return _backward_solve(ctx)


def backward_solve_dpecms(
    route, lambda0=None, grid=None, dpcfg=None, gamma=0.65, params=None, cfg=None, ecms_cfg=None
):
    """DP over the powertrain torque with the ECMS split for lambda0

    Parameters as backward_solve_benchmark, plus

    lambda0 : float, optional
        Equivalence factor offset, overrides ecms_cfg.lambda0
    ecms_cfg : EcmsConfig, optional

    Returns
    -------
    tuple
        (ValueTable, PolicyTable)

    """
    params = params or VehicleParams()
    cfg = cfg or ProblemConfig()
    dpcfg = dpcfg or DPConfig.dpecms()
    ecms_cfg = ecms_cfg or ecms.EcmsConfig()
    if lambda0 is not None:
        ecms_cfg = ecms_cfg.with_lambda0(lambda0)
    grid = grid or dpcfg.grid(route, cfg)
    _check_gamma(gamma)
    ctx = SolveContext("dpecms", route, grid, params, cfg, dpcfg, gamma, ecms_cfg)
    return _backward_solve(ctx)


def _check_gamma(gamma):
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must lie in [0, 1], got {}".format(gamma))


def bellman_control(ctx, value, k, x):
    """Controls minimising g + J_k+1 at the actual state x

    Returns
    -------
    dict
        Control name to value (t_eng, t_bsg, t_pt)

    Raises
    ------
    SimulationDivergenceError
        If no candidate reaches a finite value

    """
    stage = ctx.stage(k, [x.e], [x.xi])
    next_value = value_lookup(
        ctx.grid,
        value.tables[k + 1],
        k + 1,
        ctx.route,
        ctx.cfg,
        ctx.soc_tol,
        ctx.dpcfg.mode,
    )
    best_value, best = backup(stage, next_value)
    if np.isinf(best_value[0, 0]):
        raise SimulationDivergenceError(k, dominant_tag(stage, (0, 0)))
    picked = pick_controls(stage, best, best_value)
    return {name: float(arr[0, 0]) for name, arr in picked.items()}


def policy_control(policy, k, x, mode):
    """Stored controls at the actual state

    'nearest' takes the nearest node, 'interp' interpolates bilinearly over
    the corners holding controls (renormalised weights) and falls back to
    the nearest node with controls.
    """
    grid = policy.grid
    e_nodes, xi_nodes = grid.e_nodes[k], grid.xi_nodes
    arrays = {name: policy.controls[name][k] for name in ("t_eng", "t_bsg", "t_pt")}
    has = np.isfinite(arrays["t_pt"])
    if not has.any():
        raise SimulationDivergenceError(k, "no-control")
    e = np.clip(x.e, e_nodes[0], e_nodes[-1])
    xi = np.clip(x.xi, xi_nodes[0], xi_nodes[-1])

    if mode == "interp":
        i0, we = bracket(e_nodes, e)
        j0, wx = bracket(xi_nodes, xi)
        i1 = min(int(i0) + 1, len(e_nodes) - 1)
        j1 = min(int(j0) + 1, len(xi_nodes) - 1)
        corners = [
            ((1 - we) * (1 - wx), int(i0), int(j0)),
            (we * (1 - wx), i1, int(j0)),
            ((1 - we) * wx, int(i0), j1),
            (we * wx, i1, j1),
        ]
        corners = [(w, i, j) for w, i, j in corners if w > 0 and has[i, j]]
        total = sum(w for w, _, _ in corners)
        if total > 0:
            return {
                name: float(sum(w * arr[i, j] for w, i, j in corners) / total)
                for name, arr in arrays.items()
            }

    i = int(nearest_node(e_nodes, e))
    j = int(nearest_node(xi_nodes, xi))
    if not has[i, j]:
        # nearest node with controls in normalised coordinates
        ii, jj = np.nonzero(has)
        de = (e_nodes[ii] - e) / max(np.ptp(e_nodes), 1.0)
        dx = (xi_nodes[jj] - xi) / max(np.ptp(xi_nodes), 1e-12)
        pos = int(np.argmin(de**2 + dx**2))
        i, j = int(ii[pos]), int(jj[pos])
    return {name: float(arr[i, j]) for name, arr in arrays.items()}


def _ecms_split(ctx, k, x, t_pt):
    factor = ecms.soc_penalty(x.xi, ctx.ecms_cfg)
    split = ecms.optimal_split(
        x, np.array([t_pt]), factor, k, ctx.route, ctx.params, ctx.cfg, ctx.ecms_cfg
    )
    if not split.feasible[0]:
        raise SimulationDivergenceError(k, "no-split")
    t_bsg = float(split.t_bsg[0])
    return {"t_eng": t_pt - ctx.params.belt_ratio * t_bsg, "t_bsg": t_bsg, "t_pt": t_pt}


def trajectory_record(k, route, x, out, cost):
    """One trajectory row for the step from grid point k"""
    return {
        "k": k,
        "d_m": float(route.d[k]),
        "v_mps": x.v,
        "soc": x.xi,
        "T_eng_Nm": float(out.t_eng),
        "T_bsg_Nm": float(out.t_bsg),
        "T_pt_Nm": float(out.t_pt),
        "fuel_kg": float(out.mdot * out.t),
        "t_s": float(out.t),
        "cost": float(cost),
    }


def final_record(route, x):
    """Row of the last grid point: final state, no controls"""
    k = route.n_points - 1
    return {
        "k": k,
        "d_m": float(route.d[k]),
        "v_mps": x.v,
        "soc": x.xi,
        "T_eng_Nm": np.nan,
        "T_bsg_Nm": np.nan,
        "T_pt_Nm": np.nan,
        "fuel_kg": 0.0,
        "t_s": 0.0,
        "cost": 0.0,
    }


def forward_simulate(policy, x_1=None, route=None, params=None, lookup=None):
    """Replay a policy through the plant model

    Parameters
    ----------
    policy : PolicyTable
    x_1 : StateVector, optional
        Start state, default (v_min[0]^2, soc_init)
    route : Route, optional
        Route for the replay, default the one of the solve
    params : VehicleParams, optional
        Plant for the replay, default the one of the solve
    lookup : str, optional
        'bellman' (re-minimise g + J at the actual state) or 'policy'
        (stored controls, DP-ECMS split recomputed by ECMS); default from
        the DPConfig of the solve, which is 'policy' unless configured

    Returns
    -------
    Trajectory

    Raises
    ------
    NoFeasiblePathError
        If the start state has no finite value
    SimulationDivergenceError
        If a control violates a constraint at the actual state or the
        terminal SoC window (if enforced) is missed

    """
    ctx = policy.context
    changes = dict()
    if route is not None:
        changes["route"] = route
    if params is not None:
        changes["params"] = params
    if changes:
        ctx = ctx.replace(**changes)
    lookup = lookup or ctx.dpcfg.replay
    if lookup not in REPLAY:
        raise ValueError("lookup must be one of {}".format(REPLAY))
    x = x_1 or ctx.start_state()
    policy.value.start_value(x)

    records = []
    for k in range(ctx.route.n_points - 1):
        if lookup == "bellman":
            ctrl = bellman_control(ctx, policy.value, k, x)
        else:
            ctrl = policy_control(policy, k, x, ctx.dpcfg.mode)
            if policy.solver == "dpecms":
                ctrl = _ecms_split(ctx, k, x, ctrl["t_pt"])
        out = transition(x, ctrl["t_eng"], ctrl["t_bsg"], k, ctx.route, ctx.params, ctx.cfg)
        if out.tag != 0:
            raise SimulationDivergenceError(k, out.tag_name())
        records.append(
            trajectory_record(k, ctx.route, x, out, stage_cost(out, ctx.gamma, ctx.cfg.mdot_norm))
        )
        x = out.next_state
        if ctx.dpcfg.mode == "nearest":
            x = snap_state(ctx.grid, k + 1, x)
    records.append(final_record(ctx.route, x))

    if abs(x.xi - ctx.cfg.soc_init) > ctx.soc_tol + 1e-12:
        raise SimulationDivergenceError(ctx.route.n_points - 1, "terminal-soc")
    meta = dict(solver=policy.solver, gamma=ctx.gamma, lookup=lookup)
    if ctx.lambda0 is not None:
        meta["lambda0"] = ctx.lambda0
    return Trajectory.from_records(records, name=policy.solver, meta=meta)


def snap_state(grid, k, x):
    """State moved to its nearest node of grid point k"""
    i = int(nearest_node(grid.e_nodes[k], x.e))
    j = int(nearest_node(grid.xi_nodes, x.xi))
    return StateVector(float(grid.e_nodes[k][i]), float(grid.xi_nodes[j]))
