""" Testing the value table arithmetic and the backward DP
"""

import os
import sys

import numpy as np
import numpy.testing as npt
import pytest

TESTPATH = os.path.dirname(os.path.abspath(__file__))
sys.path.append(os.path.join(TESTPATH, ".."))

from pyecodrive.core.constants import INFEASIBLE  # noqa
from pyecodrive.core.dpsystem import (  # noqa
    Grid2D,
    NoFeasiblePathError,
    ValueTable,
)
from pyecodrive.core.route import Route  # noqa
from pyecodrive.tools.dpmath import (  # noqa
    bracket,
    interpolate_value,
    nearest_node,
    terminal_cost,
)
from pyecodrive.tools.dpsolver import (  # noqa
    DPConfig,
    backup,
    backward_solve_benchmark,
    backward_solve_dpecms,
    forward_simulate,
)
from pyecodrive.tools.ecms import EcmsConfig  # noqa
from pyecodrive.tools.spmath import (  # noqa
    ProblemConfig,
    StageTable,
    StateVector,
    benchmark_stage,
    stage_cost,
    transition,
)
from pyecodrive.tools.vehicle import VehicleParams  # noqa


@pytest.fixture()
def table():
    return np.array([[1.0, 3.0], [2.0, 4.0]])


@pytest.fixture()
def cfg():
    return ProblemConfig(soc_tol=0.05, stop_band=3.0)


@pytest.fixture()
def single_stage():
    return Route.from_arrays([1.0, 1.0], dd=10.0)


@pytest.fixture()
def tiny_route():
    return Route.from_arrays([1.0, 8.0, 8.0, 1.0], dd=20.0)


@pytest.fixture()
def tiny_dpcfg():
    return DPConfig(n_e=5, n_xi=11, n_t_eng=7, n_t_bsg=5)


class TestValueArithmetic:
    def test_terminal_cost(self):
        assert terminal_cost(0.55, 0.55, 0.55, 0.005) == 0.0
        assert terminal_cost(1.0, 0.56, 0.55, 0.005) == INFEASIBLE
        # the tolerance is inclusive
        assert terminal_cost(1.0, 0.555, 0.55, 0.005) == 0.0
        assert terminal_cost(1.0, 0.7, 0.55, np.inf) == 0.0
        assert terminal_cost(4.0, 0.55, 0.55, 0.005, e_bounds=(1.0, 1.0)) == INFEASIBLE

    def test_interpolate_on_node(self, table):
        nodes = np.array([0.0, 1.0])
        for i in range(2):
            for j in range(2):
                assert interpolate_value(table, nodes, nodes, nodes[i], nodes[j]) == table[i, j]

    def test_interpolate_midpoint(self, table):
        nodes = np.array([0.0, 1.0])
        assert interpolate_value(table, nodes, nodes, 0.5, 0.5) == pytest.approx(2.5)

    def test_interpolate_sentinel(self, table):
        nodes = np.array([0.0, 1.0])
        blocked = table.copy()
        blocked[1, 1] = INFEASIBLE
        assert interpolate_value(blocked, nodes, nodes, 0.5, 0.5) == INFEASIBLE
        # corners of zero weight do not matter
        assert interpolate_value(blocked, nodes, nodes, 0.0, 0.5) == pytest.approx(2.0)
        assert interpolate_value(table, nodes, nodes, 1.5, 0.5) == INFEASIBLE
        assert interpolate_value(table, nodes, nodes, 0.3, 0.8, mode="nearest") == 3.0
        with pytest.raises(ValueError):
            interpolate_value(table, nodes, nodes, 0.5, 0.5, mode="cubic")

    def test_sentinel_never_mixes(self):
        rng = np.random.default_rng(3)
        nodes = np.linspace(0.0, 1.0, 6)
        for _ in range(20):
            tab = rng.uniform(0, 10, size=(6, 6))
            tab[rng.uniform(size=(6, 6)) < 0.3] = INFEASIBLE
            e, xi = rng.uniform(0, 1, size=(2, 50))
            val = interpolate_value(tab, nodes, nodes, e, xi)
            assert not np.any(np.isnan(val))
            finite = np.isfinite(val)
            assert np.all(val[finite] <= 10.0)

    def test_nearest_and_bracket(self):
        nodes = np.array([0.0, 1.0, 3.0])
        npt.assert_array_equal(nearest_node(nodes, [0.5, 0.6, 2.0, 5.0]), [0, 1, 1, 2])
        lower, weight = bracket(nodes, np.array([0.0, 2.0, 3.0]))
        npt.assert_array_equal(lower, [0, 1, 1])
        npt.assert_allclose(weight, [0.0, 0.5, 1.0])


class TestGrid:
    def test_from_route(self, tiny_route):
        grid = Grid2D.from_route(tiny_route, 5, 11, ProblemConfig())
        assert grid.n_points == 4
        assert len(grid.e_nodes[0]) == 1
        assert len(grid.e_nodes[1]) == 5
        assert grid.e_nodes[1][-1] == 64.0
        assert grid.xi_nodes[grid.xi_index(0.55)] == 0.55
        assert grid.n_cells(1) == 55

    def test_initial_soc_inserted(self, tiny_route):
        cfg = ProblemConfig(soc_init=0.523)
        grid = Grid2D.from_route(tiny_route, 5, 6, cfg)
        assert len(grid.xi_nodes) == 6
        assert 0.523 in grid.xi_nodes
        assert np.all(np.diff(grid.xi_nodes) > 0)

    def test_soc_span_and_window_nodes(self, tiny_route):
        grid = Grid2D.from_route(tiny_route, 5, 11, ProblemConfig(), soc_span=0.05, window=True)
        assert len(grid.xi_nodes) == 13
        assert grid.xi_nodes[0] == pytest.approx(0.5)
        assert grid.xi_nodes[-1] == pytest.approx(0.6)
        assert np.isclose(grid.xi_nodes, 0.545).sum() == 1
        assert np.isclose(grid.xi_nodes, 0.555).sum() == 1
        assert grid.xi_nodes[grid.xi_index(0.55)] == 0.55
        # window edges on existing nodes are not duplicated
        wide = ProblemConfig(soc_tol=0.05)
        grid = Grid2D.from_route(tiny_route, 5, 11, wide, soc_span=0.05, window=True)
        assert len(grid.xi_nodes) == 11

    def test_invalid_grid(self):
        with pytest.raises(ValueError):
            Grid2D([np.array([1.0, 1.0])], np.array([0.5]))
        with pytest.raises(ValueError):
            ValueTable(Grid2D([np.array([1.0])], np.array([0.5])), [np.zeros((2, 1))])


class TestBackup:
    def _stage(self, cost, tag):
        n = len(cost)
        return StageTable(
            k=0,
            e_next=np.ones((1, 1, n)),
            xi_next=np.full((1, 1, n), 0.5),
            cost=np.array(cost, dtype=float).reshape(1, 1, n),
            tag=np.array(tag, dtype=np.int8).reshape(1, 1, n),
            controls={"t_pt": np.arange(n, dtype=float).reshape(1, 1, n)},
        )

    def test_minimum_over_feasible(self):
        value, best = backup(self._stage([2.0, 1.0, 0.0], [0, 0, 5]), lambda e, xi: 0.5 * e)
        assert value[0, 0] == 1.5
        assert best[0, 0] == 1

    def test_ties_to_lowest_index(self):
        value, best = backup(self._stage([1.0, 1.0], [0, 0]), lambda e, xi: np.zeros_like(e))
        assert best[0, 0] == 0

    def test_all_infeasible(self):
        value, _ = backup(self._stage([1.0, 1.0], [3, 4]), lambda e, xi: np.zeros_like(e))
        assert value[0, 0] == INFEASIBLE


class TestBenchmark:
    def test_single_stage_reduction(self, single_stage, cfg, tiny_dpcfg):
        params = VehicleParams()
        value, policy = backward_solve_benchmark(
            single_stage, dpcfg=tiny_dpcfg, gamma=0.65, params=params, cfg=cfg
        )
        grid = value.grid
        stage = benchmark_stage(
            0, grid.e_nodes[0], grid.xi_nodes, single_stage, params, cfg, 7, 5, 0.65
        )
        final = terminal_cost(stage.e_next, stage.xi_next, 0.55, cfg.soc_tol, (1.0, 1.0))
        expected = np.where((stage.tag == 0) & np.isfinite(final), stage.cost, INFEASIBLE)
        npt.assert_array_equal(value.tables[0], expected.min(axis=-1))
        assert np.isfinite(value.tables[0]).any()
        npt.assert_array_equal(value.tables[-1][0], terminal_cost(1.0, grid.xi_nodes, 0.55, 0.05))

    def test_value_policy_consistency(self, single_stage, cfg, tiny_dpcfg):
        params = VehicleParams()
        value, policy = backward_solve_benchmark(
            single_stage, dpcfg=tiny_dpcfg, gamma=0.65, params=params, cfg=cfg
        )
        grid = value.grid
        for j, xi in enumerate(grid.xi_nodes):
            if not np.isfinite(value.tables[0][0, j]):
                assert np.isnan(policy["t_eng"][0][0, j])
                continue
            out = transition(
                (grid.e_nodes[0][0], xi),
                policy["t_eng"][0][0, j],
                policy["t_bsg"][0][0, j],
                0,
                single_stage,
                params,
                cfg,
            )
            assert out.feasible
            assert float(stage_cost(out, 0.65)) == pytest.approx(value.tables[0][0, j], rel=1e-12)

    def test_threads_identical(self, tiny_route, cfg, tiny_dpcfg):
        one, _ = backward_solve_benchmark(tiny_route, dpcfg=tiny_dpcfg, cfg=cfg)
        two, _ = backward_solve_benchmark(tiny_route, dpcfg=tiny_dpcfg.replace(threads=2), cfg=cfg)
        for k in range(tiny_route.n_points):
            npt.assert_array_equal(one.tables[k], two.tables[k])

    def test_refined_controls_never_worse(self, tiny_route, cfg):
        coarse = DPConfig(n_e=5, n_xi=11, n_t_eng=4, n_t_bsg=3, mode="nearest")
        fine = coarse.replace(n_t_eng=7, n_t_bsg=5)
        v_coarse, _ = backward_solve_benchmark(tiny_route, dpcfg=coarse, cfg=cfg)
        v_fine, _ = backward_solve_benchmark(tiny_route, dpcfg=fine, cfg=cfg)
        j = v_coarse.grid.xi_index(0.55)
        assert v_fine.tables[0][0, j] <= v_coarse.tables[0][0, j] + 1e-9

    def test_no_feasible_path(self, cfg, tiny_dpcfg):
        # 11 m/s within 10 m from rest exceeds the acceleration window
        route = Route.from_arrays([1.0, 12.0, 1.0], v_min=[1.0, 11.0, 1.0], dd=10.0)
        value, policy = backward_solve_benchmark(route, dpcfg=tiny_dpcfg, cfg=cfg)
        assert not np.isfinite(value.tables[0]).any()
        with pytest.raises(NoFeasiblePathError) as err:
            forward_simulate(policy)
        assert err.value.tag == "start"

    def test_config_validation(self, tiny_route):
        with pytest.raises(ValueError):
            DPConfig(mode="cubic")
        with pytest.raises(ValueError):
            DPConfig(n_e=0)
        with pytest.raises(ValueError):
            backward_solve_benchmark(tiny_route, gamma=1.5)
        with pytest.raises(ValueError):
            DPConfig(soc_span=0.0)
        assert DPConfig.dpecms().n_xi == 11
        # the DP-ECMS keeps the terminal SoC window
        assert DPConfig.dpecms().soc_terminal
        assert DPConfig.dpecms().window_nodes
        assert DPConfig().replay == "policy"


class TestReplay:
    def test_replay_hits_stops(self, tiny_route, cfg, tiny_dpcfg):
        route = Route.from_arrays([1.0, 8.0, 8.0, 1.0, 8.0, 8.0, 1.0], dd=20.0, stops=[3])
        value, policy = backward_solve_dpecms(
            route,
            lambda0=2.5,
            dpcfg=DPConfig.dpecms(n_e=6, n_t_pt=11, mode="nearest", replay="policy"),
            cfg=cfg,
        )
        traj = forward_simulate(policy)
        assert len(traj) == route.n_points
        npt.assert_allclose(traj.data.v_mps.values[route.stop], route.v_floor)
        assert traj.meta["lambda0"] == 2.5
        assert np.isnan(traj.data.T_pt_Nm.iloc[-1])
        cum = traj.cumulative
        npt.assert_allclose(cum.cost.values, np.cumsum(traj.data.cost.values))

    def test_nearest_replay_matches_value(self, tiny_route, cfg):
        dpcfg = DPConfig(n_e=5, n_xi=11, n_t_eng=5, n_t_bsg=3, mode="nearest", replay="policy")
        value, policy = backward_solve_benchmark(tiny_route, dpcfg=dpcfg, cfg=cfg)
        start = value.start_value(policy.context.start_state())
        traj = forward_simulate(policy)
        assert traj.cost_total == pytest.approx(start, rel=1e-9)
        assert abs(traj.soc_end - traj.soc_start) <= cfg.soc_tol + 1e-12

    def test_unknown_lookup(self, single_stage, cfg, tiny_dpcfg):
        _, policy = backward_solve_benchmark(single_stage, dpcfg=tiny_dpcfg, cfg=cfg)
        with pytest.raises(ValueError):
            forward_simulate(policy, lookup="magic")


class TestDefaultProblem:
    """Solves with the default ProblemConfig (narrow stop band and SoC window)"""

    @pytest.fixture()
    def route(self):
        return Route.from_arrays([1.0, 8.0, 10.0, 10.0, 10.0, 8.0, 1.0], dd=20.0)

    def test_stops_reachable(self, route):
        cfg = ProblemConfig()
        bench, policy = backward_solve_benchmark(
            route, dpcfg=DPConfig.benchmark(n_e=6, n_xi=11, n_t_eng=7, n_t_bsg=5), cfg=cfg
        )
        x = policy.context.start_state()
        assert np.isfinite(bench.start_value(x))
        ecms_value, _ = backward_solve_dpecms(
            route,
            lambda0=2.5,
            dpcfg=DPConfig.dpecms(n_e=6, n_t_pt=11, soc_terminal=False),
            cfg=cfg,
        )
        assert np.isfinite(ecms_value.start_value(x))
        traj = forward_simulate(policy, lookup="bellman")
        assert traj.data.v_mps.iloc[-1] == route.v_floor
        assert abs(traj.soc_end - traj.soc_start) <= cfg.soc_tol + 1e-12

    def test_benchmark_never_worse_than_dpecms(self, route):
        cfg = ProblemConfig()
        dpcfg = DPConfig.dpecms(n_e=8, n_t_pt=15, soc_terminal=False)
        grid = dpcfg.grid(route, cfg)
        x = StateVector(route.v_min[0] ** 2, cfg.soc_init)
        bench, _ = backward_solve_benchmark(
            route, grid=grid, dpcfg=dpcfg.replace(n_t_eng=15, n_t_bsg=11), cfg=cfg
        )
        for lambda0 in (1.5, 2.5, 4.0):
            value, _ = backward_solve_dpecms(
                route,
                lambda0=lambda0,
                grid=grid,
                dpcfg=dpcfg,
                cfg=cfg,
                ecms_cfg=EcmsConfig(n_split=11),
            )
            assert bench.start_value(x) <= value.start_value(x) * (1 + 1e-2)

    def test_expensive_electricity_never_discharges(self):
        # flat route, lambda0 far above any fuel-to-electricity conversion;
        # gentle acceleration keeps every torque within the engine range
        route = Route.from_arrays([1.0, 10.0, 10.0, 10.0, 10.0, 1.0], dd=20.0)
        cfg = ProblemConfig(a_max=1.0)
        _, policy = backward_solve_dpecms(
            route,
            lambda0=1000.0,
            dpcfg=DPConfig.dpecms(n_e=6, n_t_pt=11, soc_terminal=False, soc_span=None),
            cfg=cfg,
        )
        traj = forward_simulate(policy, lookup="bellman")
        assert np.all(np.diff(traj.data.soc) >= -1e-12)
        assert traj.soc_end > traj.soc_start
