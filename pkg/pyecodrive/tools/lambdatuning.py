"""
Tuning of the equivalence factor offset lambda0 by shooting

The full-route DP-ECMS is solved and replayed for a given lambda0; the
residual is the SoC drift xi_N - xi_1 of the replayed trajectory. A
higher lambda0 makes electrical energy more expensive, so the residual is
expected to increase with lambda0; bisection on a sign-changing bracket
finds the charge-sustaining value. The residual needs the terminal SoC
window released; the returned solution is solved with the window again.

"""

import dataclasses
import logging
import warnings
from dataclasses import dataclass, field
from typing import Any, List

import numpy as np

from pyecodrive.core.dpsystem import NoFeasiblePathError, SimulationDivergenceError
from pyecodrive.tools.dpsolver import DPConfig, backward_solve_dpecms, forward_simulate
from pyecodrive.tools.ecms import EcmsConfig
from pyecodrive.tools.spmath import ProblemConfig
from pyecodrive.tools.vehicle import VehicleParams


class BracketError(ValueError):
    """The residual has the same sign at both ends of the bracket"""

    def __init__(self, r_lo, r_hi):
        super().__init__(
            "No sign change in the bracket: r_lo = {:.5g}, r_hi = {:.5g}".format(r_lo, r_hi)
        )
        self.r_lo = r_lo
        self.r_hi = r_hi


class ShootingWarning(UserWarning):
    """The SoC residual is not monotone in lambda0"""

    pass


@dataclass(frozen=True)
class ShootingConfig:
    lam_lo: float = 0.5
    lam_hi: float = 10.0
    tol: float = 0.005
    max_iter: int = 20

    def __post_init__(self):
        if not 0 < self.lam_lo < self.lam_hi:
            raise ValueError("Bracket requires 0 < lam_lo < lam_hi")
        if self.tol < 0 or self.max_iter < 2:
            raise ValueError("tol must not be negative and max_iter must be at least 2")

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class ShootingResult:
    """Outcome of the bisection

    trace and lambdas list every residual evaluation in order; lambda0 is
    the evaluated value with the smallest |residual|. terminal is True when
    solution was solved with the terminal SoC window.
    """

    lambda0: float
    residual: float
    iterations: int
    converged: bool
    trace: List[float] = field(default_factory=list)
    lambdas: List[float] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    solution: Any = None
    terminal: bool = False

    def to_dict(self):
        return dict(
            lambda0=self.lambda0,
            residual=self.residual,
            iterations=self.iterations,
            converged=self.converged,
            trace=list(self.trace),
            lambdas=list(self.lambdas),
            warnings=list(self.warnings),
            terminal=self.terminal,
        )


def bisect_residual(residual, lam_lo, lam_hi, tol=0.005, max_iter=20):
    """Bisection on a residual function of lambda0

    Parameters
    ----------
    residual : callable
        lambda0 -> residual (float) or (residual, payload)
    lam_lo, lam_hi : float
        Bracket
    tol : float
        Stop at |residual| <= tol
    max_iter : int
        Maximum number of residual evaluations (bracket ends included)

    Returns
    -------
    ShootingResult

    Raises
    ------
    BracketError
        If the residual does not change sign over the bracket

    """
    result = ShootingResult(lambda0=np.nan, residual=np.nan, iterations=0, converged=False)
    payloads = []

    def evaluate(lam):
        res = residual(lam)
        payload = None
        if isinstance(res, tuple):
            res, payload = res
        res = float(res)
        result.trace.append(res)
        result.lambdas.append(float(lam))
        payloads.append(payload)
        logging.debug("Shooting: lambda0 = {:.6g}, residual = {:+.6g}".format(lam, res))
        return res

    def finish():
        best = int(np.argmin(np.abs(result.trace)))
        result.lambda0 = result.lambdas[best]
        result.residual = result.trace[best]
        result.iterations = len(result.trace)
        result.converged = abs(result.residual) <= tol
        result.solution = payloads[best]
        logging.info(
            "Shooting finished after {} evaluations: lambda0 = {:.6g}, "
            "residual = {:+.6g}".format(result.iterations, result.lambda0, result.residual)
        )
        return result

    def warn(message):
        result.warnings.append(message)
        warnings.warn(message, ShootingWarning, stacklevel=3)

    lo, hi = float(lam_lo), float(lam_hi)
    r_lo = evaluate(lo)
    if abs(r_lo) <= tol:
        return finish()
    r_hi = evaluate(hi)
    if abs(r_hi) <= tol:
        return finish()
    if np.sign(r_lo) == np.sign(r_hi):
        raise BracketError(r_lo, r_hi)
    if r_lo > r_hi:
        warn("SoC residual decreases over the bracket [{}, {}]".format(lo, hi))

    while len(result.trace) < max_iter:
        mid = 0.5 * (lo + hi)
        r_mid = evaluate(mid)
        if not min(r_lo, r_hi) <= r_mid <= max(r_lo, r_hi):
            warn(
                "Non-monotone SoC residual at lambda0 = {:.6g}: {:+.6g} outside "
                "[{:+.6g}, {:+.6g}]".format(mid, r_mid, min(r_lo, r_hi), max(r_lo, r_hi))
            )
        if abs(r_mid) <= tol:
            break
        if np.sign(r_mid) == np.sign(r_lo):
            lo, r_lo = mid, r_mid
        else:
            hi, r_hi = mid, r_mid
    return finish()


def soc_residual(
    lambda0, route, gamma, params=None, cfg=None, dpcfg=None, ecms_cfg=None, lookup="bellman"
):
    """SoC drift xi_N - xi_1 of the DP-ECMS replay for lambda0

    Returns
    -------
    tuple
        (residual, (ValueTable, PolicyTable, Trajectory))

    """
    value, policy = backward_solve_dpecms(
        route,
        lambda0=lambda0,
        dpcfg=dpcfg,
        gamma=gamma,
        params=params,
        cfg=cfg,
        ecms_cfg=ecms_cfg,
    )
    traj = forward_simulate(policy, lookup=lookup)
    return traj.soc_end - traj.soc_start, (value, policy, traj)


def shoot(
    route,
    gamma,
    shooting_cfg=None,
    params=None,
    cfg=None,
    dpcfg=None,
    ecms_cfg=None,
    lookup="bellman",
):
    """Charge-sustaining lambda0 of the full-route DP-ECMS

    lambda0 is tuned with the terminal SoC window released, so that the
    residual can change sign. If dpcfg keeps the window, the DP-ECMS is
    solved once more with it for the tuned lambda0; when the window cannot
    be reached the tuned solution is kept with a ShootingWarning.

    Parameters
    ----------
    route : Route
    gamma : float
    shooting_cfg : ShootingConfig, optional
        Bracket, tolerance (on |xi_N - xi_1|) and iteration cap
    params, cfg, dpcfg, ecms_cfg : optional
        Passed to the DP-ECMS solve
    lookup : str
        Replay of the residual trajectories, see forward_simulate

    Returns
    -------
    ShootingResult
        solution holds (ValueTable, PolicyTable, Trajectory) of the
        returned lambda0

    """
    shooting_cfg = shooting_cfg or ShootingConfig()
    params = params or VehicleParams()
    cfg = cfg or ProblemConfig()
    dpcfg = dpcfg or DPConfig.dpecms()
    ecms_cfg = ecms_cfg or EcmsConfig()
    released = dpcfg.replace(soc_terminal=False)

    def residual(lam):
        return soc_residual(lam, route, gamma, params, cfg, released, ecms_cfg, lookup)

    result = bisect_residual(
        residual,
        shooting_cfg.lam_lo,
        shooting_cfg.lam_hi,
        tol=shooting_cfg.tol,
        max_iter=shooting_cfg.max_iter,
    )
    if dpcfg.soc_terminal:
        try:
            _, solution = soc_residual(
                result.lambda0, route, gamma, params, cfg, dpcfg, ecms_cfg, lookup
            )
        except (NoFeasiblePathError, SimulationDivergenceError) as err:
            message = (
                "Terminal SoC window not reachable at lambda0 = {:.6g} ({}), "
                "keeping the solution without it".format(result.lambda0, err)
            )
            result.warnings.append(message)
            warnings.warn(message, ShootingWarning, stacklevel=2)
        else:
            result.solution = solution
            result.terminal = True
    return result
