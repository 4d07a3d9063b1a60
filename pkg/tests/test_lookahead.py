""" Testing the receding-horizon control with a lambda0 grid
"""

import dataclasses
import os
import sys
import warnings
from types import SimpleNamespace

import numpy as np
import numpy.testing as npt
import pytest

TESTPATH = os.path.dirname(os.path.abspath(__file__))
sys.path.append(os.path.join(TESTPATH, ".."))

from pyecodrive.core.constants import INFEASIBLE  # noqa
from pyecodrive.core.dpsystem import NoFeasiblePathError  # noqa
from pyecodrive.core.route import Perturbation, Route  # noqa
from pyecodrive.tools.dpmath import snap_to_grid  # noqa
from pyecodrive.tools.dpsolver import (  # noqa
    DPConfig,
    backward_solve_benchmark,
    backward_solve_dpecms,
    forward_simulate,
)
from pyecodrive.tools.ecms import EcmsConfig, dpecms_stage  # noqa
from pyecodrive.tools.lambdatuning import ShootingWarning, shoot  # noqa
from pyecodrive.tools.lookahead import (  # noqa
    LookaheadConfig,
    StageTableCache,
    _horizon_context,
    horizon_solve,
    receding_horizon_run,
    select_lambda,
    solve_horizons,
)
from pyecodrive.tools.spmath import ProblemConfig, StateVector  # noqa

LAMBDA0 = 2.5


@pytest.fixture(scope="module")
def route():
    return Route.from_arrays([1.0, 8.0, 10.0, 10.0, 10.0, 8.0, 1.0], dd=20.0)


@pytest.fixture(scope="module")
def cfg():
    return ProblemConfig()


@pytest.fixture(scope="module")
def base(route, cfg):
    _, policy = backward_solve_dpecms(
        route,
        lambda0=LAMBDA0,
        dpcfg=DPConfig.dpecms(n_e=8, n_t_pt=15, soc_terminal=False),
        gamma=0.65,
        cfg=cfg,
        ecms_cfg=EcmsConfig(n_split=7),
    )
    return policy


@pytest.fixture(scope="module")
def nearest_base(route, cfg):
    _, policy = backward_solve_dpecms(
        route,
        lambda0=LAMBDA0,
        dpcfg=DPConfig.dpecms(n_e=6, n_t_pt=9, mode="nearest", soc_terminal=False),
        gamma=0.65,
        cfg=cfg,
        ecms_cfg=EcmsConfig(n_split=5),
    )
    return policy


@pytest.fixture(scope="module")
def tuned(route, cfg):
    """Charge-sustaining DP-ECMS with the terminal SoC window"""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShootingWarning)
        return shoot(
            route,
            0.65,
            cfg=cfg,
            dpcfg=DPConfig.dpecms(n_e=8, n_t_pt=15),
            ecms_cfg=EcmsConfig(n_split=7),
        )


class TestSelection:
    def test_argmin(self):
        assert select_lambda([5.0, 4.2, 4.9]) == 1
        assert select_lambda([3.3]) == 0

    def test_ties_to_smaller_lambda(self):
        assert select_lambda([4.2, 4.2]) == 0
        assert select_lambda([np.inf, 4.2, 4.2]) == 1

    def test_all_infeasible(self):
        with pytest.raises(NoFeasiblePathError):
            select_lambda([np.inf, np.inf])


class TestConfig:
    def test_lambda_grid(self):
        la_cfg = LookaheadConfig(n_lambda=5, lam_lo=1.0, lam_hi=3.0)
        npt.assert_allclose(la_cfg.lambda_grid, [1.0, 1.5, 2.0, 2.5, 3.0])
        assert LookaheadConfig(n_lambda=1, lam_lo=1.0, lam_hi=3.0).lambda_grid[0] == 2.0
        assert list(LookaheadConfig(lambdas=(2.0, 2.5)).lambda_grid) == [2.0, 2.5]

    def test_around(self):
        la_cfg = LookaheadConfig.around(2.0, n_lambda=3, spread=0.5, n_h=5)
        npt.assert_allclose(la_cfg.lambda_grid, [1.0, 2.0, 3.0])
        assert la_cfg.n_h == 5
        assert la_cfg.to_dict()["lambda_grid"] == pytest.approx([1.0, 2.0, 3.0])

    def test_around_even_size_holds_lambda0(self):
        la_cfg = LookaheadConfig.around(2.0, n_lambda=4, spread=0.3)
        npt.assert_allclose(la_cfg.lambda_grid, [1.6, 2.0, 2.4, 2.8])
        assert 2.0 in list(la_cfg.lambda_grid)
        assert LookaheadConfig.around(2.87, n_lambda=1).lambdas == (2.87,)

    def test_validation(self):
        with pytest.raises(ValueError):
            LookaheadConfig(n_h=0)
        with pytest.raises(ValueError):
            LookaheadConfig(n_h=3, stride=4)
        with pytest.raises(ValueError):
            LookaheadConfig(lambdas=(3.0, 2.0))
        with pytest.raises(ValueError):
            LookaheadConfig.around(2.0, spread=1.5)


class TestHorizon:
    def test_full_horizon_equals_full_route(self, route, base):
        x = base.context.start_state()
        cost, control = horizon_solve(0, x, LAMBDA0, base, n_h=route.n_points - 1)
        expected = float(base.value.interpolate(0, x.e, x.xi))
        assert np.isfinite(expected)
        assert cost == pytest.approx(expected, rel=1e-12)
        assert set(control) == {"t_eng", "t_bsg", "t_pt"}

    def test_stage_tables_reused(self, route, base):
        ctx = _horizon_context(base, route)
        cache = StageTableCache(ctx, [LAMBDA0])
        grid = ctx.grid
        solve_horizons(0, ctx.start_state(), base, cache, 4)
        assert cache.misses == 3
        assert cache.hits == 0
        x = StateVector(grid.e_nodes[1][3], 0.55)
        solve_horizons(1, x, base, cache, 4)
        assert cache.misses == 4
        assert cache.hits == 2
        cache.evict_before(2)
        assert len(cache) == 3

    def test_larger_grid_never_worse(self, route, base):
        x = base.context.start_state()
        ctx = _horizon_context(base, route)
        small = solve_horizons(0, x, base, StageTableCache(ctx, [2.0, 3.0]), 3)
        large = solve_horizons(0, x, base, StageTableCache(ctx, [1.5, 2.0, 2.5, 3.0]), 3)
        assert large.values.min() <= small.values.min()


class TestRecedingHorizon:
    def test_single_lambda_full_horizon_matches_base(self, route, base):
        la_cfg = LookaheadConfig(n_h=route.n_points - 1, lambdas=(LAMBDA0,))
        traj, trace = receding_horizon_run(route, base, 0.65, la_cfg)
        ref = forward_simulate(base, lookup="bellman")
        assert traj.cost_total == pytest.approx(ref.cost_total, rel=1e-9)
        npt.assert_allclose(traj.data.v_mps, ref.data.v_mps, rtol=1e-9)
        assert len(trace) == route.n_points - 1
        assert all(lam == LAMBDA0 for _, lam in trace)

    def test_lambda_column_and_trace(self, route, base):
        la_cfg = LookaheadConfig.around(LAMBDA0, n_lambda=3, spread=0.2, n_h=3)
        traj, trace = receding_horizon_run(route, base, 0.65, la_cfg)
        assert "lambda" in traj.data.columns
        assert np.isnan(traj.data["lambda"].iloc[-1])
        chosen = [lam for _, lam in trace]
        npt.assert_allclose(traj.data["lambda"].iloc[:-1], chosen)
        assert set(chosen) <= set(la_cfg.lambda_grid)
        assert traj.meta["n_h"] == 3

    def test_stride(self, route, base):
        la_cfg = LookaheadConfig(n_h=3, stride=3, lambdas=(LAMBDA0,))
        traj, trace = receding_horizon_run(route, base, 0.65, la_cfg)
        assert [j for j, _ in trace] == [0, 3]
        assert len(traj) == route.n_points

    def test_threads(self, route, base):
        la_cfg = LookaheadConfig.around(LAMBDA0, n_lambda=4, spread=0.2, n_h=3)
        one, _ = receding_horizon_run(route, base, 0.65, la_cfg)
        two, _ = receding_horizon_run(route, base, 0.65, dataclasses.replace(la_cfg, threads=2))
        assert one.cost_total == two.cost_total

    def test_perturbation_respected(self, route, base):
        perts = [Perturbation(d=60.0, v_max=7.0, activate_at_stage=1)]
        la_cfg = LookaheadConfig(n_h=3, lambdas=(LAMBDA0,))
        traj, _ = receding_horizon_run(route, base, 0.65, la_cfg, perturbations=perts)
        capped = traj.data[traj.data.d_m >= 60.0]
        assert np.all(capped.v_mps <= 7.0 + 1e-6)

    def test_base_checks(self, route, base):
        with pytest.raises(ValueError):
            receding_horizon_run(route, base, 0.3)
        with pytest.raises(ValueError):
            receding_horizon_run(Route.from_arrays([1.0, 8.0, 1.0], dd=20.0), base, 0.65)
        bench = SimpleNamespace(solver="benchmark", context=base.context)
        with pytest.raises(ValueError):
            receding_horizon_run(route, bench, 0.65)


def two_stage_enumeration(j, x, lambda0, base):
    """Cheapest two-stage sequence from x closed by the base value

    Next states snap to the nearest node as in the 'nearest' backups.
    """
    ctx = base.context
    grid = ctx.grid

    def stage(k, e, xi):
        return dpecms_stage(
            k,
            [e],
            [xi],
            [lambda0],
            ctx.route,
            ctx.params,
            ctx.cfg,
            ctx.dpcfg.n_t_pt,
            ctx.ecms_cfg,
            ctx.gamma,
        )[0]

    def snapped(k, e, xi):
        ii, jj, inside = snap_to_grid(grid.e_nodes[k], grid.xi_nodes, e, xi)
        return int(ii), int(jj), bool(inside)

    best = INFEASIBLE
    first = stage(j, x.e, x.xi)
    for u in range(first.shape[-1]):
        if first.tag[0, 0, u] != 0:
            continue
        i1, j1, inside = snapped(j + 1, first.e_next[0, 0, u], first.xi_next[0, 0, u])
        if not inside:
            continue
        second = stage(j + 1, grid.e_nodes[j + 1][i1], grid.xi_nodes[j1])
        for w in range(second.shape[-1]):
            if second.tag[0, 0, w] != 0:
                continue
            i2, j2, inside = snapped(j + 2, second.e_next[0, 0, w], second.xi_next[0, 0, w])
            if not inside:
                continue
            rest = second.cost[0, 0, w] + base.value.tables[j + 2][i2, j2]
            best = min(best, first.cost[0, 0, u] + rest)
    return best


class TestHorizonOracle:
    def test_matches_enumeration(self, nearest_base):
        grid = nearest_base.grid
        for i in (1, 3):
            x = StateVector(grid.e_nodes[1][i], 0.55)
            expected = two_stage_enumeration(1, x, LAMBDA0, nearest_base)
            cost, _ = horizon_solve(1, x, LAMBDA0, nearest_base, n_h=2)
            assert np.isfinite(expected)
            assert cost == pytest.approx(expected, rel=1e-12)


class TestTunedBase:
    def test_window_kept(self, tuned):
        assert tuned.terminal
        _, policy, traj = tuned.solution
        assert policy.context.dpcfg.soc_terminal
        assert abs(traj.soc_end - traj.soc_start) <= 0.005 + 1e-12

    def test_lookahead_charge_sustaining(self, route, tuned):
        _, policy, _ = tuned.solution
        la_cfg = LookaheadConfig.around(tuned.lambda0, n_lambda=4, spread=0.2, n_h=3)
        traj, _ = receding_horizon_run(route, policy, 0.65, la_cfg)
        assert abs(traj.soc_end - traj.soc_start) <= 0.01

    def test_rollout_no_worse_than_base(self, route, tuned):
        _, policy, ref = tuned.solution
        la_cfg = LookaheadConfig.around(tuned.lambda0, n_lambda=3, spread=0.2, n_h=3)
        assert tuned.lambda0 in list(la_cfg.lambda_grid)
        traj, _ = receding_horizon_run(route, policy, 0.65, la_cfg)
        assert traj.cost_total <= ref.cost_total * (1 + 1e-2)

    def test_horizon_sandwich(self, route, cfg, tuned):
        _, policy, ref = tuned.solution
        _, bench = backward_solve_benchmark(
            route,
            dpcfg=DPConfig.benchmark(n_e=8, n_t_eng=15, n_t_bsg=11),
            gamma=0.65,
            cfg=cfg,
        )
        lower = forward_simulate(bench, lookup="bellman").cost_total
        for n_h in (2, 4, 6):
            la_cfg = LookaheadConfig.around(tuned.lambda0, n_lambda=3, spread=0.2, n_h=n_h)
            traj, _ = receding_horizon_run(route, policy, 0.65, la_cfg)
            assert lower * (1 - 1e-2) <= traj.cost_total <= ref.cost_total * (1 + 1e-2)
