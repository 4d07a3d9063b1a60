"""
Evaluation harness: cost reports, solver comparison, sweeps, the
brute-force oracle and the complexity estimate

"""

import dataclasses
import itertools
import logging
import math
from dataclasses import dataclass, field
from multiprocessing.pool import ThreadPool
from typing import Optional

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from pyecodrive.core.constants import INFEASIBLE, PARETO_COLUMNS, SOLVERS
from pyecodrive.core.dpsystem import Grid2D, NoFeasiblePathError, SimulationDivergenceError
from pyecodrive.core.route import Route
from pyecodrive.tools.dpmath import snap_to_grid
from pyecodrive.tools.dpsolver import (
    REPLAY,
    DPConfig,
    backward_solve_benchmark,
    backward_solve_dpecms,
    forward_simulate,
    terminal_table,
)
from pyecodrive.tools.ecms import EcmsConfig
from pyecodrive.tools.edutil import EVAL_COUNTER
from pyecodrive.tools.lambdatuning import BracketError, ShootingConfig, shoot
from pyecodrive.tools.lookahead import LookaheadConfig, receding_horizon_run
from pyecodrive.tools.spmath import ProblemConfig, StateVector, benchmark_stage
from pyecodrive.tools.vehicle import VehicleParams


class SocNeutralityError(ValueError):
    """Comparison of a trajectory that is not charge sustaining"""

    pass


class OracleSizeError(ValueError):
    """Too many control sequences for exhaustive enumeration"""

    pass


class EvaluationError(AssertionError):
    """Stage costs do not add up to the closed-form total"""

    pass


@dataclass
class CostReport:
    """Totals of one trajectory (or the failure of a sweep entry)"""

    gamma: float
    fuel_kg: float
    time_s: float
    cost: float
    solver: str = ""
    soc_neutral: bool = False
    soc_start: float = np.nan
    soc_end: float = np.nan
    error: Optional[str] = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def failed(cls, gamma, solver, error):
        return cls(gamma, np.nan, np.nan, np.nan, solver=solver, error=str(error))

    def to_dict(self):
        return dataclasses.asdict(self)


def cumulative_cost(traj, gamma, mdot_norm=1e-3, solver="", soc_tol=0.005):
    """Cost report of a trajectory

    The summed stage costs are checked against the closed form
    gamma * fuel / mdot_norm + (1 - gamma) * time.

    Raises
    ------
    EvaluationError
        If both differ by more than a relative 1e-9

    """
    fuel = math.fsum(traj.data.fuel_kg)
    time = math.fsum(traj.data.t_s)
    cost = math.fsum(traj.data.cost)
    closed = gamma * fuel / mdot_norm + (1 - gamma) * time
    if not np.isclose(cost, closed, rtol=1e-9, atol=1e-12):
        raise EvaluationError(
            "Stage costs sum to {:.12g}, closed form gives {:.12g}".format(cost, closed)
        )
    return CostReport(
        gamma=gamma,
        fuel_kg=fuel,
        time_s=time,
        cost=cost,
        solver=solver or traj.name,
        soc_neutral=bool(abs(traj.soc_end - traj.soc_start) <= soc_tol + 1e-12),
        soc_start=traj.soc_start,
        soc_end=traj.soc_end,
        extra=dict(traj.meta),
    )


def cost_increment(ref, other):
    """Relative cost increase of other over ref in percent

    Raises
    ------
    SocNeutralityError
        If one of the reports is not charge sustaining
    ValueError
        If the reports belong to different gamma

    """
    if not np.isclose(ref.gamma, other.gamma):
        raise ValueError("Reports for different gamma: {} and {}".format(ref.gamma, other.gamma))
    for rep in (ref, other):
        if not rep.soc_neutral:
            raise SocNeutralityError(
                "{} at gamma {} is not SoC neutral ({:.4f} -> {:.4f})".format(
                    rep.solver, rep.gamma, rep.soc_start, rep.soc_end
                )
            )
    return 100.0 * (other.cost - ref.cost) / ref.cost


@dataclass
class RunSettings:
    """Solver settings shared by the sweeps

    replay is the lookup of every replay (see forward_simulate); the
    harness re-minimises on the value tables by default since stored
    controls interpolated between cells can miss the narrow terminal SoC
    window.
    """

    params: VehicleParams = field(default_factory=VehicleParams)
    cfg: ProblemConfig = field(default_factory=ProblemConfig)
    dpcfg: DPConfig = field(default_factory=DPConfig.benchmark)
    dpecms_cfg: DPConfig = field(default_factory=DPConfig.dpecms)
    ecms_cfg: EcmsConfig = field(default_factory=EcmsConfig)
    shooting_cfg: ShootingConfig = field(default_factory=ShootingConfig)
    la_cfg: Optional[LookaheadConfig] = None
    la_spread: Optional[float] = None
    lambda0: Optional[float] = None
    perturbations: tuple = ()
    replay: str = "bellman"

    def __post_init__(self):
        if self.replay not in REPLAY:
            raise ValueError("replay must be one of {}".format(REPLAY))

    def lookahead_config(self, lambda0):
        """Look-ahead settings for a tuned lambda0

        Without la_cfg the default grid around lambda0 is used. With
        la_spread set, the grid of la_cfg is re-centred on lambda0 with that
        relative spread; otherwise la_cfg is used as given.
        """
        if self.la_cfg is None:
            return LookaheadConfig.around(lambda0)
        if self.la_spread is None:
            return self.la_cfg
        return LookaheadConfig.around(
            lambda0,
            n_lambda=self.la_cfg.n_lambda,
            spread=self.la_spread,
            n_h=self.la_cfg.n_h,
            stride=self.la_cfg.stride,
            threads=self.la_cfg.threads,
        )

    def to_dict(self):
        content = dict(
            params=self.params.to_dict(),
            problem=self.cfg.to_dict(),
            benchmark=self.dpcfg.to_dict(),
            dpecms=self.dpecms_cfg.to_dict(),
            ecms=self.ecms_cfg.to_dict(),
            shooting=self.shooting_cfg.to_dict(),
            lambda0=self.lambda0,
            replay=self.replay,
            perturbations=[dataclasses.asdict(pert) for pert in self.perturbations],
        )
        if self.la_cfg:
            content["lookahead"] = self.la_cfg.to_dict()
            content["lookahead_spread"] = self.la_spread
        return content


def run_solver(route, gamma, solver="benchmark", settings=None):
    """Solve, replay and report one (route, gamma, solver) case

    Returns
    -------
    tuple
        (Trajectory, CostReport, details dict)

    """
    settings = settings or RunSettings()
    if solver not in SOLVERS:
        raise ValueError("Unknown solver {}, choose from {}".format(solver, SOLVERS))
    details = dict()
    if solver == "benchmark":
        _, policy = backward_solve_benchmark(
            route, dpcfg=settings.dpcfg, gamma=gamma, params=settings.params, cfg=settings.cfg
        )
        traj = forward_simulate(policy, lookup=settings.replay)
    else:
        if settings.lambda0 is None:
            shot = shoot(
                route,
                gamma,
                settings.shooting_cfg,
                settings.params,
                settings.cfg,
                settings.dpecms_cfg,
                settings.ecms_cfg,
                lookup=settings.replay,
            )
            details["shooting"] = shot.to_dict()
            _, policy, traj = shot.solution
            lambda0 = shot.lambda0
        else:
            policy, lambda0 = _dpecms_base(route, gamma, settings, settings.lambda0)
            traj = forward_simulate(policy, lookup=settings.replay)
        if solver == "lookahead":
            la_cfg = settings.lookahead_config(lambda0)
            traj, lam_trace = receding_horizon_run(
                route, policy, gamma, la_cfg, perturbations=settings.perturbations
            )
            details["lambda_trace"] = lam_trace
        traj.meta["lambda0"] = lambda0
    report = cumulative_cost(
        traj, gamma, settings.cfg.mdot_norm, solver=solver, soc_tol=settings.cfg.soc_tol
    )
    return traj, report, details


def pareto_sweep(route, gammas, solver="benchmark", settings=None, threads=1):
    """Cost reports over gamma; failing entries are reported, not raised

    Returns
    -------
    list of CostReport, sorted by gamma

    """

    def one(gamma):
        try:
            return run_solver(route, gamma, solver, settings)[1]
        except (NoFeasiblePathError, SimulationDivergenceError, BracketError) as err:
            logging.warning("{} failed for gamma = {}: {}".format(solver, gamma, err))
            return CostReport.failed(gamma, solver, err)

    if threads > 1:
        with ThreadPool(threads) as pool:
            reports = pool.map(one, gammas)
    else:
        reports = [one(gamma) for gamma in gammas]
    reports = sorted(reports, key=lambda rep: rep.gamma)
    logging.info(
        "Pareto sweep {}: {} of {} gamma values solved".format(
            solver, sum(rep.error is None for rep in reports), len(reports)
        )
    )
    return reports


def reports_to_frame(reports):
    """Table of cost reports with the pareto.csv columns"""
    frame = pd.DataFrame([rep.to_dict() for rep in reports])
    if frame.empty:
        return pd.DataFrame(columns=PARETO_COLUMNS)
    return frame[PARETO_COLUMNS + ["error"]]


def increments_table(ref_reports, other_reports):
    """Cost increments of other over ref per gamma (percent)"""
    rows = []
    for ref, other in zip(ref_reports, other_reports):
        try:
            inc = cost_increment(ref, other)
        except (SocNeutralityError, ValueError) as err:
            logging.warning("No increment for gamma = {}: {}".format(ref.gamma, err))
            inc = np.nan
        rows.append(
            dict(
                gamma=ref.gamma,
                ref_solver=ref.solver,
                solver=other.solver,
                ref_cost=ref.cost,
                cost=other.cost,
                increment_pct=inc,
            )
        )
    return pd.DataFrame(rows)


def horizon_study(route, gamma, horizons, settings=None, lambda0=None):
    """Look-ahead cost reports for several horizon lengths N_H

    The full-route DP-ECMS is tuned (or solved for lambda0) once and
    reused for every horizon.
    """
    settings = settings or RunSettings()
    base, lambda0 = _dpecms_base(route, gamma, settings, lambda0)
    reports = []
    for n_h in horizons:
        la_cfg = dataclasses.replace(
            settings.lookahead_config(lambda0), n_h=int(n_h), stride=1
        )
        reports.append(_lookahead_report(route, base, gamma, la_cfg, settings, n_h=n_h))
    return reports


def lambda_grid_study(route, gamma, sizes, settings=None, lambda0=None, spread=0.5):
    """Look-ahead cost reports for several sizes n_i of the lambda0 grid"""
    settings = settings or RunSettings()
    base, lambda0 = _dpecms_base(route, gamma, settings, lambda0)
    n_h = settings.la_cfg.n_h if settings.la_cfg else LookaheadConfig().n_h
    reports = []
    for n_lambda in sizes:
        la_cfg = LookaheadConfig.around(lambda0, n_lambda=int(n_lambda), spread=spread, n_h=n_h)
        reports.append(
            _lookahead_report(route, base, gamma, la_cfg, settings, n_lambda=n_lambda)
        )
    return reports


def _dpecms_base(route, gamma, settings, lambda0):
    if lambda0 is None:
        shot = shoot(
            route,
            gamma,
            settings.shooting_cfg,
            settings.params,
            settings.cfg,
            settings.dpecms_cfg,
            settings.ecms_cfg,
            lookup=settings.replay,
        )
        return shot.solution[1], shot.lambda0
    _, base = backward_solve_dpecms(
        route,
        lambda0=lambda0,
        dpcfg=settings.dpecms_cfg,
        gamma=gamma,
        params=settings.params,
        cfg=settings.cfg,
        ecms_cfg=settings.ecms_cfg,
    )
    return base, lambda0


def _lookahead_report(route, base, gamma, la_cfg, settings, **extra):
    try:
        traj, _ = receding_horizon_run(
            route, base, gamma, la_cfg, perturbations=settings.perturbations
        )
    except (NoFeasiblePathError, SimulationDivergenceError) as err:
        logging.warning("Look-ahead failed ({}): {}".format(extra, err))
        report = CostReport.failed(gamma, "lookahead", err)
    else:
        report = cumulative_cost(
            traj, gamma, settings.cfg.mdot_norm, "lookahead", settings.cfg.soc_tol
        )
    report.extra.update(extra)
    return report


def plot_pareto(reports, ax=None, file_name=None, file_dpi=300):
    """Fuel over travel time, one line per solver"""
    frame = reports_to_frame(reports).dropna(subset=["fuel_kg"])
    if ax is None:
        _, ax = plt.subplots()
    for solver, group in frame.groupby("solver"):
        group = group.sort_values("time_s")
        ax.plot(group.time_s, group.fuel_kg, marker="o", label=solver)
    ax.set_xlabel("travel time (s)")
    ax.set_ylabel("fuel (kg)")
    ax.legend(loc="best")
    if file_name:
        ax.figure.savefig(file_name, dpi=file_dpi)
    return ax


# Brute-force oracle


@dataclass
class TinyProblem:
    """Benchmark problem small enough for exhaustive enumeration

    The DP uses 'nearest' backups, so the oracle and the DP search the
    same discrete problem.
    """

    route: Route
    grid: Grid2D
    dpcfg: DPConfig
    gamma: float
    params: VehicleParams = field(default_factory=VehicleParams)
    cfg: ProblemConfig = field(default_factory=ProblemConfig)

    @property
    def n_controls(self):
        return self.dpcfg.n_t_eng * self.dpcfg.n_t_bsg

    @property
    def n_sequences(self):
        return self.n_controls ** (self.route.n_points - 1)

    def solve(self):
        """Benchmark DP of the problem: (ValueTable, PolicyTable)"""
        return backward_solve_benchmark(
            self.route, self.grid, self.dpcfg, self.gamma, self.params, self.cfg
        )

    @property
    def start_state(self):
        return StateVector(self.grid.e_nodes[0][0], self.cfg.soc_init)


@dataclass
class OracleResult:
    cost: float
    controls: list
    sequences: int

    @property
    def feasible(self):
        return np.isfinite(self.cost)


def brute_force_oracle(problem, max_sequences=1e7):
    """Optimal cost of a tiny problem by enumerating all control sequences

    Next states are snapped to the nearest node as in the 'nearest' DP and
    the cost of a sequence is accumulated from the last stage backwards, so
    that the result is bitwise comparable with the DP value.

    Raises
    ------
    OracleSizeError
        If the number of sequences exceeds max_sequences

    """
    if problem.n_sequences > max_sequences:
        raise OracleSizeError(
            "{} control sequences exceed the limit of {:g}".format(
                problem.n_sequences, max_sequences
            )
        )
    route, grid, dpcfg, cfg = problem.route, problem.grid, problem.dpcfg, problem.cfg
    n_points = route.n_points

    # per stage: cost, next node and control of every (i, j, u), None if infeasible
    moves = []
    for k in range(n_points - 1):
        stage = benchmark_stage(
            k,
            grid.e_nodes[k],
            grid.xi_nodes,
            route,
            problem.params,
            cfg,
            dpcfg.n_t_eng,
            dpcfg.n_t_bsg,
            problem.gamma,
        )
        ii, jj, inside = snap_to_grid(
            grid.e_nodes[k + 1], grid.xi_nodes, stage.e_next, stage.xi_next
        )
        usable = (stage.tag == 0) & inside & grid.masks[k + 1][ii, jj]
        t_eng = np.broadcast_to(stage.controls["t_eng"], stage.shape)
        t_bsg = np.broadcast_to(stage.controls["t_bsg"], stage.shape)
        table = dict()
        for i, j, u in zip(*np.nonzero(usable)):
            table.setdefault((int(i), int(j)), []).append(
                (
                    int(u),
                    stage.cost[i, j, u],
                    int(ii[i, j, u]),
                    int(jj[i, j, u]),
                    (float(t_eng[i, j, u]), float(t_bsg[i, j, u])),
                )
            )
        moves.append(table)
    tol = cfg.soc_tol if dpcfg.soc_terminal else np.inf
    final = terminal_table(grid, route, cfg, tol)
    leaves = itertools.count()

    def best(k, i, j):
        if k == n_points - 1:
            next(leaves)
            return final[i, j], []
        best_cost, best_seq = INFEASIBLE, []
        for _, cost, i_next, j_next, ctrl in moves[k].get((i, j), []):
            rest, seq = best(k + 1, i_next, j_next)
            if np.isinf(rest):
                continue
            total = cost + rest
            if total < best_cost:
                best_cost, best_seq = total, [ctrl] + seq
        return best_cost, best_seq

    start = problem.start_state
    cost, seq = best(0, 0, grid.xi_index(start.xi))
    logging.debug(
        "Oracle enumerated {} of {} control sequences".format(next(leaves), problem.n_sequences)
    )
    return OracleResult(cost=float(cost), controls=seq, sequences=problem.n_sequences)


def random_tiny_problem(seed, max_points=5):
    """Random tiny benchmark problem for the oracle comparison

    Up to max_points grid points, at most 4 x 3 controls and a coarse
    state grid; the enumeration stays below 10^5 sequences.
    """
    rng = np.random.default_rng(seed)
    n_points = int(rng.integers(3, max_points + 1))
    v_max = rng.uniform(4.0, 8.0, size=n_points)
    grade = rng.uniform(-0.03, 0.03, size=n_points)
    route = Route.from_arrays(v_max, dd=10.0, grade=grade)
    cfg = ProblemConfig(stop_band=3.0, soc_tol=0.01)
    dpcfg = DPConfig(
        n_e=int(rng.integers(2, 5)),
        n_xi=3,
        n_t_eng=int(rng.integers(2, 5)),
        n_t_bsg=int(rng.integers(1, 4)),
        mode="nearest",
        replay="policy",
    )
    grid = dpcfg.grid(route, cfg)
    gamma = float(rng.uniform(0.3, 0.8))
    return TinyProblem(route=route, grid=grid, dpcfg=dpcfg, gamma=gamma, cfg=cfg)


def oracle_suite(seeds, max_points=5):
    """Compare DP and oracle on random tiny problems

    Returns
    -------
    pandas.DataFrame
        One row per seed with the DP value, the oracle cost, the replayed
        trajectory cost and the flags 'equal' (exact value match) and
        'replay_ok'

    """
    rows = []
    for seed in seeds:
        problem = random_tiny_problem(seed, max_points=max_points)
        value, policy = problem.solve()
        try:
            dp_cost = value.start_value(problem.start_state)
        except NoFeasiblePathError:
            dp_cost = INFEASIBLE
        oracle = brute_force_oracle(problem)
        replay_cost = INFEASIBLE
        if np.isfinite(dp_cost):
            replay_cost = forward_simulate(policy, lookup="policy").cost_total
        equal = dp_cost == oracle.cost
        replay_ok = bool(
            np.isinf(dp_cost) or np.isclose(replay_cost, dp_cost, rtol=1e-9, atol=1e-12)
        )
        rows.append(
            dict(
                seed=seed,
                n_points=problem.route.n_points,
                sequences=oracle.sequences,
                gamma=problem.gamma,
                dp_cost=dp_cost,
                oracle_cost=oracle.cost,
                replay_cost=replay_cost,
                equal=bool(equal),
                replay_ok=replay_ok,
            )
        )
    frame = pd.DataFrame(rows)
    logging.info(
        "Oracle suite: {} of {} problems match".format(
            int((frame.equal & frame.replay_ok).sum()) if len(frame) else 0, len(frame)
        )
    )
    return frame


# Complexity


@dataclass(frozen=True)
class ComplexityConfig:
    n_points: int
    n_e: int = 25
    n_xi: int = 51
    n_t_eng: int = 15
    n_t_bsg: int = 11
    n_xi_ecms: int = 11
    n_t_pt: int = 25
    n_split: int = 21

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class ComplexityReport:
    n_c: int
    n_c_tilde: int
    ratio: float
    measured: dict = field(default_factory=dict)

    def to_dict(self):
        return dataclasses.asdict(self)


def complexity_estimate(config, measured=None):
    """Analytic evaluation counts of the benchmark and the DP-ECMS

    n_c = stages * n_E * n_xi * n_Teng * n_Tbsg and
    n_c_tilde = stages * n_E * n_xi_ecms * n_Tpt * n_split with
    stages = max(n_points - 1, 0).
    """
    stages = max(config.n_points - 1, 0)
    n_c = stages * config.n_e * config.n_xi * config.n_t_eng * config.n_t_bsg
    n_c_tilde = stages * config.n_e * config.n_xi_ecms * config.n_t_pt * config.n_split
    ratio = n_c / n_c_tilde if n_c_tilde else float("nan")
    return ComplexityReport(n_c=n_c, n_c_tilde=n_c_tilde, ratio=ratio, measured=measured or {})


def measure_complexity(route, gamma=0.65, settings=None, lambda0=None):
    """Complexity estimate plus the evaluation counters of one solve each"""
    settings = settings or RunSettings()
    EVAL_COUNTER.reset()
    backward_solve_benchmark(
        route, dpcfg=settings.dpcfg, gamma=gamma, params=settings.params, cfg=settings.cfg
    )
    bench = EVAL_COUNTER.snapshot()
    EVAL_COUNTER.reset()
    backward_solve_dpecms(
        route,
        lambda0=lambda0,
        dpcfg=settings.dpecms_cfg,
        gamma=gamma,
        params=settings.params,
        cfg=settings.cfg,
        ecms_cfg=settings.ecms_cfg,
    )
    dpecms = EVAL_COUNTER.snapshot()
    measured = dict(
        benchmark_plant=bench.get("plant", 0),
        dpecms_plant=dpecms.get("plant", 0),
        dpecms_ecms=dpecms.get("ecms", 0),
    )
    if measured["dpecms_plant"]:
        measured["plant_ratio"] = measured["benchmark_plant"] / measured["dpecms_plant"]
    config = ComplexityConfig(
        n_points=route.n_points,
        n_e=settings.dpcfg.n_e,
        n_xi=settings.dpcfg.n_xi,
        n_t_eng=settings.dpcfg.n_t_eng,
        n_t_bsg=settings.dpcfg.n_t_bsg,
        n_xi_ecms=settings.dpecms_cfg.n_xi,
        n_t_pt=settings.dpecms_cfg.n_t_pt,
        n_split=settings.ecms_cfg.n_split,
    )
    return complexity_estimate(config, measured)
