""" Testing the shooting on the equivalence factor offset
"""

import os
import sys
import warnings
from unittest import mock

import numpy as np
import pytest

TESTPATH = os.path.dirname(os.path.abspath(__file__))
sys.path.append(os.path.join(TESTPATH, ".."))

from pyecodrive.core.dpsystem import NoFeasiblePathError  # noqa
from pyecodrive.core.route import Route  # noqa
from pyecodrive.tools.dpsolver import DPConfig  # noqa
from pyecodrive.tools.ecms import EcmsConfig  # noqa
from pyecodrive.tools.lambdatuning import (  # noqa
    BracketError,
    ShootingConfig,
    ShootingWarning,
    bisect_residual,
    shoot,
)


def linear(root):
    return lambda lam: lam - root


def test_bisection_converges():
    result = bisect_residual(linear(3.1), 0.5, 10.0, tol=0.005)
    assert result.converged
    assert abs(result.residual) <= 0.005
    assert result.lambda0 == pytest.approx(3.1, abs=0.005)
    assert len(result.trace) == result.iterations
    assert all(0.5 <= lam <= 10.0 for lam in result.lambdas)
    assert not result.warnings


def test_bracket_end_within_tolerance():
    result = bisect_residual(linear(0.5), 0.5, 10.0)
    assert result.iterations == 1
    assert result.lambda0 == 0.5
    assert result.converged


def test_no_sign_change():
    with pytest.raises(BracketError) as err:
        bisect_residual(linear(20.0), 0.5, 10.0)
    assert err.value.r_lo == pytest.approx(-19.5)
    assert err.value.r_hi == pytest.approx(-10.0)


def test_iteration_cap_returns_best():
    result = bisect_residual(linear(np.pi), 0.5, 10.0, tol=0.0, max_iter=6)
    assert result.iterations == 6
    assert not result.converged
    best = np.argmin(np.abs(result.trace))
    assert result.lambda0 == result.lambdas[best]
    assert result.residual == result.trace[best]


def test_non_monotone_residual_warns():
    bumps = {4.25: 5.0}

    def residual(lam):
        return bumps.get(lam, lam - 4.0)

    with pytest.warns(ShootingWarning):
        result = bisect_residual(residual, 0.5, 8.0, tol=0.01)
    assert result.warnings
    assert "Non-monotone" in result.warnings[0]


def test_decreasing_residual_warns():
    with pytest.warns(ShootingWarning):
        result = bisect_residual(lambda lam: 3.0 - lam, 0.5, 10.0)
    assert result.converged
    assert result.lambda0 == pytest.approx(3.0, abs=0.005)


def test_payload_of_best_iterate():
    result = bisect_residual(lambda lam: (lam - 2.0, "lam={}".format(lam)), 1.0, 3.0)
    assert result.lambda0 == 2.0
    assert result.solution == "lam=2.0"


def test_shooting_config():
    with pytest.raises(ValueError):
        ShootingConfig(lam_lo=5.0, lam_hi=1.0)
    with pytest.raises(ValueError):
        ShootingConfig(max_iter=1)
    assert ShootingConfig().to_dict()["lam_hi"] == 10.0


def test_shoot_uses_soc_residual():
    route = Route.from_arrays([1.0, 10.0, 10.0, 1.0], dd=20.0)
    with mock.patch(
        "pyecodrive.tools.lambdatuning.soc_residual",
        side_effect=lambda lam, *args: (lam - 2.87, ("value", "policy", lam)),
    ) as residual:
        result = shoot(route, 0.65, ShootingConfig(lam_lo=0.5, lam_hi=10.0, tol=0.001))
    assert result.converged
    assert result.lambda0 == pytest.approx(2.87, abs=0.001)
    # tuning with the window released, one more solve with the window
    assert residual.call_count == result.iterations + 1
    released = [call[0][5] for call in residual.call_args_list]
    assert not any(dpcfg.soc_terminal for dpcfg in released[:-1])
    assert released[-1].soc_terminal
    assert residual.call_args[0][0] == result.lambda0
    assert residual.call_args[0][1] is route
    assert result.solution[2] == result.lambda0
    assert result.terminal
    content = result.to_dict()
    assert "solution" not in content
    assert content["iterations"] == len(content["trace"])
    assert content["terminal"]


def test_shoot_keeps_tuned_solution_without_window():
    route = Route.from_arrays([1.0, 10.0, 10.0, 1.0], dd=20.0)

    def residual(lam, route, gamma, params, cfg, dpcfg, ecms_cfg, lookup):
        if dpcfg.soc_terminal:
            raise NoFeasiblePathError("window missed", tag="start")
        return lam - 2.0, ("value", "policy", lam)

    with mock.patch("pyecodrive.tools.lambdatuning.soc_residual", side_effect=residual):
        with pytest.warns(ShootingWarning):
            result = shoot(route, 0.65, ShootingConfig(lam_lo=1.0, lam_hi=3.0))
    assert not result.terminal
    assert result.solution == ("value", "policy", 2.0)
    assert "window" in result.warnings[-1]


def test_shoot_flat_route_charge_sustaining():
    route = Route.from_arrays([1.0, 10.0, 10.0, 10.0, 10.0, 10.0, 1.0], dd=20.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShootingWarning)
        result = shoot(
            route,
            0.65,
            dpcfg=DPConfig.dpecms(n_e=6, n_t_pt=11),
            ecms_cfg=EcmsConfig(n_split=7),
        )
    _, _, traj = result.solution
    assert abs(traj.soc_end - traj.soc_start) <= 0.005 + 1e-12
    assert ShootingConfig().lam_lo <= result.lambda0 <= ShootingConfig().lam_hi
    # ascending residuals over the bisection, or the warning says otherwise
    order = np.argsort(result.lambdas)
    monotone = np.all(np.diff(np.asarray(result.trace)[order]) >= 0)
    assert monotone or result.warnings
