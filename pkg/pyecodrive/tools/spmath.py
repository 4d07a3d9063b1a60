"""
Spatial-domain formulation of the eco-driving problem

State per grid point k: E = v^2 (kinetic energy per half unit mass) and the
battery state of charge xi. Controls are engine and BSG torque (benchmark
DP) or the powertrain torque only (DP-ECMS, the split is then chosen by
ECMS). All functions are vectorised and broadcast their inputs; they never
raise for infeasible controls but return a constraint tag per cell.

"""

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from pyecodrive.core.constants import V_FLOOR
from pyecodrive.tools import ptmath
from pyecodrive.tools.edutil import EVAL_COUNTER, uniform_grid

# constraint tags in precedence order, 0 is feasible
CONSTRAINT_TAGS = (
    "feasible",
    "engine-torque",
    "bsg-torque",
    "battery-power",
    "stall",
    "speed-limit",
    "speed-min",
    "soc-limit",
    "acceleration",
    "no-split",
)
TAG = {name: code for code, name in enumerate(CONSTRAINT_TAGS)}

# absolute slack on soc and acceleration bounds
BOUND_TOL = 1e-12


@dataclass(frozen=True)
class ProblemConfig:
    """Bounds and tolerances of the spatial problem

    Parameters
    ----------
    soc_min, soc_max : float
        Hard state of charge limits
    soc_init : float
        Initial (and target terminal) state of charge
    soc_tol : float
        Terminal state of charge tolerance
    a_min, a_max : float
        Acceleration window (m/s^2)
    v_floor : float
        Speed at stop points (m/s)
    stop_band : float
        Arrivals at a stop below v_floor + stop_band are braked to v_floor
    mdot_norm : float
        Fuel rate normalisation of the stage cost (kg/s)

    """

    soc_min: float = 0.3
    soc_max: float = 0.8
    soc_init: float = 0.55
    soc_tol: float = 0.005
    a_min: float = -3.0
    a_max: float = 3.0
    v_floor: float = V_FLOOR
    stop_band: float = 1.5
    mdot_norm: float = 1e-3

    def __post_init__(self):
        if not 0 <= self.soc_min < self.soc_max <= 1:
            raise ValueError("SoC limits require 0 <= soc_min < soc_max <= 1")
        if not self.soc_min <= self.soc_init <= self.soc_max:
            raise ValueError("Initial SoC outside the SoC limits")
        if self.soc_tol < 0 or self.stop_band < 0:
            raise ValueError("Tolerances must not be negative")
        if not self.a_min < 0 < self.a_max:
            raise ValueError("Acceleration window must contain zero")
        if not self.v_floor > 0 or not self.mdot_norm > 0:
            raise ValueError("v_floor and mdot_norm must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class StateVector:
    e: float
    xi: float

    @property
    def v(self):
        return float(np.sqrt(self.e))

    @classmethod
    def from_speed(cls, v, xi):
        return cls(e=float(v) ** 2, xi=float(xi))


@dataclass(frozen=True)
class ControlBenchmark:
    t_eng: float
    t_bsg: float

    def t_pt(self, params):
        return self.t_eng + params.belt_ratio * self.t_bsg


@dataclass(frozen=True)
class ControlDpEcms:
    t_pt: float


@dataclass
class StageOutput:
    """Result of one spatial step, arrays broadcast to the cell shape

    t_eng is the commanded torque at the crank (engine plus friction brake
    below T_eng_min), t_eng_act the torque delivered by the engine.
    """

    e_next: np.ndarray
    xi_next: np.ndarray
    t: np.ndarray
    mdot: np.ndarray
    i_batt: np.ndarray
    t_eng: np.ndarray
    t_bsg: np.ndarray
    t_pt: np.ndarray
    t_eng_act: Optional[np.ndarray] = None
    omega: Optional[np.ndarray] = None
    gear: Optional[np.ndarray] = None
    accel: Optional[np.ndarray] = None
    tag: Optional[np.ndarray] = None

    @property
    def fuel(self):
        return self.mdot * self.t

    @property
    def feasible(self):
        return self.tag == 0

    @property
    def next_state(self):
        return StateVector(float(self.e_next), float(self.xi_next))

    def tag_name(self):
        """Constraint name of a scalar output"""
        return CONSTRAINT_TAGS[int(self.tag)]


def _state_arrays(x):
    if isinstance(x, StateVector):
        return np.asarray(x.e, dtype=float), np.asarray(x.xi, dtype=float)
    e, xi = x
    return np.asarray(e, dtype=float), np.asarray(xi, dtype=float)


def _flag(tag, violated, name):
    """Set tag where violated and no earlier constraint was hit"""
    return np.where((tag == 0) & violated, TAG[name], tag).astype(np.int8)


def kinematics(e, t_pt, k, route, params, cfg):
    """Speed update over stage k for the powertrain torque t_pt

    Before a stop every E' up to (v_floor + stop_band)^2 is braked to
    the stop, including commands that would halt the vehicle earlier
    (E' <= 0); the acceleration of captured cells is the one of the
    trimmed step.

    Returns
    -------
    tuple
        (v, E' before stop trimming, E' after stop trimming, stage time,
        acceleration, stalled); stalled marks E' <= 0 away from a stop.
        Stalled cells get E' = v_floor^2 and finite times so that
        downstream arithmetic stays finite

    """
    e = np.asarray(e, dtype=float)
    v = np.sqrt(e)
    f_trc, _ = ptmath.driveline_force(v, t_pt, params)
    f_road = ptmath.road_load(v, route.grade[k], params)
    e_phys = e + 2 * route.dd * (f_trc - f_road) / params.mass
    floor = cfg.v_floor**2
    if route.stop[k + 1]:
        captured = e_phys <= (cfg.v_floor + cfg.stop_band) ** 2
    else:
        captured = np.zeros(np.shape(e_phys), dtype=bool)
    stalled = (e_phys <= 0) & ~captured
    e_next = np.where(captured | stalled, floor, e_phys)
    accel = (np.where(captured, e_next, e_phys) - e) / (2 * route.dd)
    v_next = np.sqrt(e_next)
    t = route.dd / (0.5 * (v + v_next))
    return v, e_phys, e_next, t, accel, stalled


def check_constraints(e_next, xi_next, accel, k, route, cfg, tag=None):
    """Constraint tag of the next state

    Speed envelope at k+1, SoC limits and the acceleration window are
    inclusive (with a small tolerance). Cells already tagged by an earlier
    constraint keep their tag.

    Returns
    -------
    numpy.array of int8
        0 for feasible cells, otherwise the index into CONSTRAINT_TAGS

    """
    e_next = np.asarray(e_next, dtype=float)
    shape = np.broadcast_shapes(e_next.shape, np.shape(xi_next), np.shape(accel))
    tag = np.zeros(shape, dtype=np.int8) if tag is None else np.broadcast_to(tag, shape)
    e_hi = route.v_max[k + 1] ** 2
    e_lo = route.v_min[k + 1] ** 2
    e_tol = 1e-9 * max(e_hi, 1.0)
    tag = _flag(tag, e_next > e_hi + e_tol, "speed-limit")
    tag = _flag(tag, e_next < e_lo - e_tol, "speed-min")
    tag = _flag(
        tag,
        (xi_next < cfg.soc_min - BOUND_TOL) | (xi_next > cfg.soc_max + BOUND_TOL),
        "soc-limit",
    )
    tag = _flag(
        tag, (accel < cfg.a_min - BOUND_TOL) | (accel > cfg.a_max + BOUND_TOL), "acceleration"
    )
    return tag


def transition(x, t_eng, t_bsg, k, route, params, cfg=None):
    """Spatial step from grid point k to k+1

    E' = E + 2 dd (F_trc - F_road) / M, stage time dd / mean speed and
    xi' = xi - t (I_batt + I_bias) / C_nom. Engine commands below
    T_eng_min are friction braking (no fuel, no electrical effect).

    Parameters
    ----------
    x : StateVector or tuple (E, xi) of arrays
    t_eng, t_bsg : float or numpy.array
        Commanded crank torque and BSG torque, broadcast against the state
    k : int
        Stage index (0 <= k < N-1)
    route : Route
    params : VehicleParams
    cfg : ProblemConfig, optional

    Returns
    -------
    StageOutput

    """
    cfg = cfg or ProblemConfig()
    e, xi = _state_arrays(x)
    t_eng = np.asarray(t_eng, dtype=float)
    t_bsg = np.asarray(t_bsg, dtype=float)
    shape = np.broadcast_shapes(e.shape, xi.shape, t_eng.shape, t_bsg.shape)
    EVAL_COUNTER.add("plant", int(np.prod(shape)))

    t_pt = t_eng + params.belt_ratio * t_bsg
    v, _, e_next, t, accel, stalled = kinematics(e, t_pt, k, route, params, cfg)
    stop_flag = bool(route.stop[k]) & (t_pt <= 0)
    omega, gear = ptmath.engine_speed(v, t_eng, stop_flag, params)
    omega = np.asarray(omega)
    te_min, te_max = ptmath.engine_torque_limits(omega, params)
    tb_min, tb_max = ptmath.bsg_torque_limits(omega, params)

    tol = ptmath.TORQUE_TOL
    tag = np.zeros(shape, dtype=np.int8)
    tag = _flag(tag, t_eng > te_max + tol * (1 + np.abs(te_max)), "engine-torque")
    tag = _flag(
        tag,
        (t_bsg < tb_min - tol * (1 + np.abs(tb_min)))
        | (t_bsg > tb_max + tol * (1 + np.abs(tb_max))),
        "bsg-torque",
    )
    t_eng_act = np.maximum(t_eng, te_min)
    mdot = ptmath._fuel_rate(t_eng_act, omega, params)
    p_bsg = ptmath._bsg_power(t_bsg, omega, params)
    i_batt, batt_ok = ptmath._battery_current(xi, p_bsg, params)
    tag = _flag(tag, ~batt_ok, "battery-power")
    tag = _flag(tag, stalled, "stall")

    xi_next = xi - t * (i_batt + params.i_bias) / params.c_nom
    tag = check_constraints(e_next, xi_next, accel, k, route, cfg, tag=tag)

    def full(arr):
        return np.broadcast_to(arr, shape)

    return StageOutput(
        e_next=full(e_next),
        xi_next=full(xi_next),
        t=full(t),
        mdot=full(mdot),
        i_batt=full(i_batt),
        t_eng=full(t_eng),
        t_bsg=full(t_bsg),
        t_pt=full(t_pt),
        t_eng_act=full(t_eng_act),
        omega=full(omega),
        gear=full(gear),
        accel=full(accel),
        tag=tag,
    )


def _stage_cost(mdot, t, gamma, mdot_norm):
    return (gamma * mdot / mdot_norm + (1 - gamma)) * t


def stage_cost(out, gamma, mdot_norm=1e-3):
    """Weighted fuel/time cost g = (gamma mdot / mdot_norm + 1 - gamma) t"""
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must lie in [0, 1]")
    return _stage_cost(np.asarray(out.mdot), np.asarray(out.t), gamma, mdot_norm)


def torque_window(e, k, route, params, cfg):
    """Powertrain torque range spanning the acceleration window at E

    Returns
    -------
    tuple
        (T_pt_lo, T_pt_hi, (T_eng_min, T_eng_max, T_bsg_min, T_bsg_max))
        with the limits at the running engine speed for E

    """
    v = np.sqrt(np.asarray(e, dtype=float))
    f_road = ptmath.road_load(v, route.grade[k], params)
    t_lo = ptmath.driveline_torque(v, params.mass * cfg.a_min + f_road, params)
    t_hi = ptmath.driveline_torque(v, params.mass * cfg.a_max + f_road, params)
    omega, _ = ptmath.engine_speed(v, None, False, params)
    limits = ptmath.torque_limits(omega, params)
    te_max, tb_max = limits[1], limits[3]
    t_hi = np.minimum(t_hi, te_max + params.belt_ratio * tb_max)
    t_lo = np.minimum(t_lo, t_hi)
    return t_lo, t_hi, limits


def benchmark_controls(e, k, route, params, cfg, n_t_eng, n_t_bsg):
    """Engine/BSG torque grids per E node

    Engine commands below T_eng_min only select the friction braking
    torque, so with three or more engine candidates n_t_eng // 4 of them
    brake (strictly below T_eng_min) and the others span the fueled range
    [T_eng_min, T_eng_hi].

    Returns
    -------
    tuple
        (t_eng, t_bsg), each of shape e.shape + (n_t_eng * n_t_bsg,),
        engine torque as the major index

    """
    e = np.asarray(e, dtype=float)
    t_lo, t_hi, (te_min, te_max, tb_min, tb_max) = torque_window(e, k, route, params, cfg)
    eng_lo = t_lo - params.belt_ratio * tb_max
    eng_hi = np.minimum(te_max, t_hi - params.belt_ratio * tb_min)
    eng_lo = np.minimum(eng_lo, eng_hi)
    n_brake = n_t_eng // 4 if n_t_eng >= 3 else 0
    if n_brake:
        brake_hi = np.maximum(np.minimum(te_min, eng_hi), eng_lo)
        braking = uniform_grid(eng_lo, brake_hi, n_brake + 1)[..., :-1]
        fueled = uniform_grid(brake_hi, eng_hi, n_t_eng - n_brake)
        t_eng = np.concatenate([braking, fueled], axis=-1)
    else:
        t_eng = uniform_grid(eng_lo, eng_hi, n_t_eng)
    t_bsg = uniform_grid(tb_min, tb_max, n_t_bsg)
    t_eng, t_bsg = np.broadcast_arrays(t_eng[..., :, np.newaxis], t_bsg[..., np.newaxis, :])
    shape = e.shape + (n_t_eng * n_t_bsg,)
    return t_eng.reshape(shape), t_bsg.reshape(shape)


def dpecms_controls(e, k, route, params, cfg, n_t_pt):
    """Powertrain torque grid per E node, shape e.shape + (n_t_pt,)"""
    t_lo, t_hi, _ = torque_window(e, k, route, params, cfg)
    return uniform_grid(t_lo, t_hi, n_t_pt)


@dataclass
class StageTable:
    """Transitions of one stage for all cells and control candidates

    Arrays have the shape (n_E, n_xi, n_u); controls maps control names to
    arrays broadcastable to that shape.
    """

    k: int
    e_next: np.ndarray
    xi_next: np.ndarray
    cost: np.ndarray
    tag: np.ndarray
    controls: dict

    @property
    def shape(self):
        return self.tag.shape


def benchmark_stage(k, e_nodes, xi_nodes, route, params, cfg, n_t_eng, n_t_bsg, gamma):
    """Stage table of the benchmark DP over (E nodes) x (xi nodes) x (T_eng, T_bsg)"""
    e = np.asarray(e_nodes, dtype=float)
    xi = np.asarray(xi_nodes, dtype=float)
    t_eng, t_bsg = benchmark_controls(e, k, route, params, cfg, n_t_eng, n_t_bsg)
    out = transition(
        (e[:, np.newaxis, np.newaxis], xi[np.newaxis, :, np.newaxis]),
        t_eng[:, np.newaxis, :],
        t_bsg[:, np.newaxis, :],
        k,
        route,
        params,
        cfg,
    )
    return StageTable(
        k=k,
        e_next=out.e_next,
        xi_next=out.xi_next,
        cost=_stage_cost(out.mdot, out.t, gamma, cfg.mdot_norm),
        tag=out.tag,
        controls={"t_eng": out.t_eng, "t_bsg": out.t_bsg, "t_pt": out.t_pt},
    )
