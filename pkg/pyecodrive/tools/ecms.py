"""
Equivalent consumption minimisation (ECMS) for the torque split

For a given powertrain torque the split between engine and BSG is the one
minimising the equivalent fuel rate

    J = mdot_fuel + lambda(xi) * P_bsg / Q_lhv

over a uniform set of BSG torque candidates. The fuel and electrical
terms only depend on the speed, the powertrain torque and the candidate,
so they are evaluated once and reused for every SoC node and every value
of lambda.

"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from pyecodrive.tools import ptmath
from pyecodrive.tools.edutil import EVAL_COUNTER, uniform_grid
from pyecodrive.tools.spmath import (
    BOUND_TOL,
    TAG,
    ProblemConfig,
    StageTable,
    StateVector,
    _stage_cost,
    dpecms_controls,
    kinematics,
    transition,
)


@dataclass(frozen=True)
class EcmsConfig:
    """Equivalence factor and split discretisation

    lambda(xi) = lambda0 + tan(clip(-(xi - xi_des) lambda1, +-(pi/2 - eps_tan)))
    """

    lambda0: float = 2.5
    lambda1: float = 5.0
    xi_des: float = 0.55
    n_split: int = 21
    eps_tan: float = 0.01

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if self.lambda1 < 0:
            raise ValueError("lambda1 must not be negative")
        if not 0 < self.xi_des < 1:
            raise ValueError("xi_des must lie in (0, 1)")
        if self.n_split < 2:
            raise ValueError("At least two split candidates required")
        if not 0 < self.eps_tan < np.pi / 2:
            raise ValueError("eps_tan must lie in (0, pi/2)")

    def with_lambda0(self, lambda0):
        return dataclasses.replace(self, lambda0=float(lambda0))

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class SplitTerms:
    """Split candidates with their fuel and electrical terms

    cands, mdot, p_bsg, pq and ok have the shape of the powertrain torque
    plus a trailing candidate axis; t is the (split independent) stage
    time.
    """

    t_pt: np.ndarray
    cands: np.ndarray
    mdot: np.ndarray
    p_bsg: np.ndarray
    pq: np.ndarray
    ok: np.ndarray
    t: np.ndarray


@dataclass
class SplitMap:
    """Optimal split per powertrain torque candidate

    cost = mdot_term + lambda_factor * pbatt_term reproduces the minimised
    equivalent fuel rate; entries with feasible False carry NaN.
    """

    t_pt: np.ndarray
    t_bsg: np.ndarray
    cost: np.ndarray
    mdot_term: np.ndarray
    pbatt_term: np.ndarray
    feasible: np.ndarray


def soc_penalty(xi, cfg):
    """Equivalence factor lambda0 * f_pen(xi), i.e. lambda0 + tan(...)"""
    limit = np.pi / 2 - cfg.eps_tan
    arg = np.clip(-(np.asarray(xi, dtype=float) - cfg.xi_des) * cfg.lambda1, -limit, limit)
    return cfg.lambda0 + np.tan(arg)


def split_terms(e, t_pt, k, route, params, cfg, ecms_cfg):
    """Candidate splits and their terms for powertrain torques t_pt at E

    The candidates are n_split uniform BSG torques between
    max(T_bsg_min, (T_pt - T_eng_max) / r_belt) and T_bsg_max; ok is False
    for all candidates when that interval is empty.
    """
    e = np.asarray(e, dtype=float)
    t_pt = np.asarray(t_pt, dtype=float)
    v, _, _, t, _, _ = kinematics(e, t_pt, k, route, params, cfg)
    stop_flag = bool(route.stop[k]) & (t_pt <= 0)
    omega, _ = ptmath.engine_speed(v, None, stop_flag, params)
    omega = np.broadcast_to(omega, np.broadcast_shapes(e.shape, t_pt.shape))
    te_min, te_max = ptmath.engine_torque_limits(omega, params)
    tb_min, tb_max = ptmath.bsg_torque_limits(omega, params)

    lo = np.maximum(tb_min, (t_pt - te_max) / params.belt_ratio)
    tol = ptmath.TORQUE_TOL * (1 + np.abs(tb_max))
    cands = uniform_grid(np.minimum(lo, tb_max), tb_max, ecms_cfg.n_split)
    ok = np.broadcast_to((lo <= tb_max + tol)[..., np.newaxis], cands.shape)
    EVAL_COUNTER.add("ecms", cands.size)

    w = omega[..., np.newaxis]
    t_eng = t_pt[..., np.newaxis] - params.belt_ratio * cands
    mdot = ptmath._fuel_rate(np.maximum(t_eng, te_min[..., np.newaxis]), w, params)
    p_bsg = ptmath._bsg_power(cands, w, params)
    return SplitTerms(
        t_pt=t_pt, cands=cands, mdot=mdot, p_bsg=p_bsg, pq=p_bsg / params.q_lhv, ok=ok, t=t
    )


def soc_feasible(xi, p_bsg, t, params, cfg):
    """Battery feasibility and SoC limits of the next state

    Returns
    -------
    tuple
        (feasibility mask, next SoC), broadcast over the inputs

    """
    current, ok = ptmath._battery_current(xi, p_bsg, params)
    xi_next = xi - t * (current + params.i_bias) / params.c_nom
    ok = ok & (xi_next >= cfg.soc_min - BOUND_TOL) & (xi_next <= cfg.soc_max + BOUND_TOL)
    return ok, xi_next


def select_split(cands, mdot, pq, factor, ok):
    """Index of the cheapest feasible candidate along the last axis

    Ties go to the candidate with the smallest |T_bsg|, then to the lower
    index.

    Returns
    -------
    tuple
        (index, any feasible, minimal cost)

    """
    cost = np.where(ok, mdot + factor * pq, np.inf)
    best = cost.min(axis=-1, keepdims=True)
    tie = ok & (cost == best)
    idx = np.argmin(np.where(tie, np.abs(cands), np.inf), axis=-1)
    return idx, np.isfinite(best[..., 0]), best[..., 0]


def _take(arr, idx, shape):
    idx = np.asarray(idx)[..., np.newaxis]
    return np.take_along_axis(np.broadcast_to(arr, shape), idx, -1)[..., 0]


def _split_map(terms, factor, ok):
    idx, has, _ = select_split(terms.cands, terms.mdot, terms.pq, factor, ok)
    shape = ok.shape
    t_bsg = _take(terms.cands, idx, shape)
    mdot = _take(terms.mdot, idx, shape)
    pq = _take(terms.pq, idx, shape)
    cost = mdot + factor * pq
    nan = np.nan
    return SplitMap(
        t_pt=terms.t_pt,
        t_bsg=np.where(has, t_bsg, nan),
        cost=np.where(has, cost, nan),
        mdot_term=np.where(has, mdot, nan),
        pbatt_term=np.where(has, pq, nan),
        feasible=has,
    )


def _state_terms(x, t_pt, k, route, params, cfg, ecms_cfg):
    if not isinstance(x, StateVector):
        x = StateVector(*x)
    terms = split_terms(x.e, t_pt, k, route, params, cfg, ecms_cfg)
    soc_ok, _ = soc_feasible(x.xi, terms.p_bsg, terms.t[..., np.newaxis], params, cfg)
    return terms, terms.ok & soc_ok


def optimal_split(x, t_pt, lam_factor, k, route, params, cfg=None, ecms_cfg=None):
    """ECMS split for powertrain torque(s) t_pt at state x

    Parameters
    ----------
    x : StateVector or tuple (E, xi)
    t_pt : float or numpy.array
        Powertrain torque candidate(s) in Nm
    lam_factor : float
        Equivalence factor lambda0 * f_pen(xi), see soc_penalty
    k : int
        Stage index
    route : Route
    params : VehicleParams
    cfg : ProblemConfig, optional
    ecms_cfg : EcmsConfig, optional

    Returns
    -------
    SplitMap

    Raises
    ------
    InfeasibleControlError
        For a scalar t_pt without any feasible split

    """
    cfg = cfg or ProblemConfig()
    ecms_cfg = ecms_cfg or EcmsConfig()
    terms, ok = _state_terms(x, t_pt, k, route, params, cfg, ecms_cfg)
    split = _split_map(terms, lam_factor, ok)
    if np.ndim(t_pt) == 0 and not split.feasible:
        raise ptmath.InfeasibleControlError(
            "No feasible torque split for T_pt = {:.2f} Nm".format(float(t_pt)),
            bound="no-split",
        )
    return split


def batch_split_lambda_grid(x, t_pt, lam_factors, k, route, params, cfg=None, ecms_cfg=None):
    """Optimal splits for several equivalence factors at once

    The candidate terms are evaluated once; every factor only recombines
    them, so each SplitMap equals optimal_split with that factor.

    Returns
    -------
    list of SplitMap, one per factor

    """
    cfg = cfg or ProblemConfig()
    ecms_cfg = ecms_cfg or EcmsConfig()
    terms, ok = _state_terms(x, t_pt, k, route, params, cfg, ecms_cfg)
    return [_split_map(terms, factor, ok) for factor in lam_factors]


def dpecms_stage(k, e_nodes, xi_nodes, lambdas, route, params, cfg, n_t_pt, ecms_cfg, gamma):
    """Stage tables of the DP-ECMS for several values of lambda0

    The split terms are computed once per (E node, T_pt, candidate) and
    shared by all SoC nodes and all lambda0; the full transition is then
    evaluated only for the selected split of every (E, xi, T_pt) cell.

    Returns
    -------
    list of StageTable, one per lambda0

    """
    e = np.asarray(e_nodes, dtype=float)
    xi = np.asarray(xi_nodes, dtype=float)
    t_pt = dpecms_controls(e, k, route, params, cfg, n_t_pt)
    terms = split_terms(e[:, np.newaxis], t_pt, k, route, params, cfg, ecms_cfg)

    # (E, xi, T_pt, candidate)
    xi4 = xi[np.newaxis, :, np.newaxis, np.newaxis]
    soc_ok, _ = soc_feasible(
        xi4,
        terms.p_bsg[:, np.newaxis],
        terms.t[:, np.newaxis, :, np.newaxis],
        params,
        cfg,
    )
    ok = terms.ok[:, np.newaxis] & soc_ok
    cands = terms.cands[:, np.newaxis]
    mdot = terms.mdot[:, np.newaxis]
    pq = terms.pq[:, np.newaxis]

    tables = []
    for lam in lambdas:
        factor = soc_penalty(xi, ecms_cfg.with_lambda0(lam))[np.newaxis, :, np.newaxis, np.newaxis]
        idx, has, _ = select_split(cands, mdot, pq, factor, ok)
        t_bsg = np.where(has, _take(cands, idx, ok.shape), 0.0)
        t_eng = t_pt[:, np.newaxis, :] - params.belt_ratio * t_bsg
        out = transition(
            (e[:, np.newaxis, np.newaxis], xi[np.newaxis, :, np.newaxis]),
            t_eng,
            t_bsg,
            k,
            route,
            params,
            cfg,
        )
        tag = np.where(~has & (out.tag == 0), TAG["no-split"], out.tag).astype(np.int8)
        tables.append(
            StageTable(
                k=k,
                e_next=out.e_next,
                xi_next=out.xi_next,
                cost=_stage_cost(out.mdot, out.t, gamma, cfg.mdot_norm),
                tag=tag,
                controls={"t_eng": out.t_eng, "t_bsg": out.t_bsg, "t_pt": out.t_pt},
            )
        )
    return tables
