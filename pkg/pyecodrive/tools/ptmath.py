""" Quasi-static powertrain equations of the mild-hybrid vehicle

All functions here are vectorised over numpy arrays and follow the
functional programming paradigm: they only depend on their inputs and the
(immutable) VehicleParams.

The public functions check their preconditions and raise; the underscore
variants skip the checks and are used by the solvers, which handle
infeasibility through constraint tags instead of exceptions.

Note
----
Sign convention for the belted starter generator (BSG): positive torque
discharges the battery (motoring), negative torque charges it (regen).

"""

import numpy as np

# relative slack when comparing torques against limit curves
TORQUE_TOL = 1e-9


class InfeasibleControlError(ValueError):
    """Control outside its admissible range"""

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class BatteryPowerLimitError(ValueError):
    """Requested battery power exceeds Voc^2 / (4 R0)"""

    pass


def _scalar(value):
    """Return 0-d results as numpy scalars, arrays unchanged"""
    return np.asarray(value)[()]


def gear_index(v, params):
    """Engaged gear (1-based) of the speed threshold schedule

    Gear g is engaged for v >= gear_thresholds[g-1]; there is no
    torque dependence and no hysteresis.
    """
    idx = np.searchsorted(params.gear_thresholds, np.asarray(v, dtype=float), "right")
    return np.clip(idx, 1, params.n_gears)


def gear_ratio(v, params):
    return np.asarray(params.gear_ratios)[gear_index(v, params) - 1]


def turbine_speed(v, params):
    """Transmission input speed for the locked torque converter"""
    return params.final_drive * gear_ratio(v, params) * np.asarray(v) / params.wheel_radius


def engine_speed(v, t_eng, stop_flag, params):
    """Engine speed and gear for the vehicle speed v

    Parameters
    ----------
    v : float or numpy.array
        Vehicle speed (m/s)
    t_eng : float or numpy.array or None
        Engine torque (Nm); the gear schedule does not depend on it
    stop_flag : bool or numpy.array
        Engine shut-off request. Only acts when the pump speed is below
        the stall speed, where it takes precedence over the idle clamp.
    params : VehicleParams

    Returns
    -------
    tuple
        (engine speed in rad/s, gear index)

    """
    v = np.asarray(v, dtype=float)
    gear = gear_index(v, params)
    slip = np.where(v < params.lockup_speed, params.slip_speed, 0.0)
    w_pump = turbine_speed(v, params) + slip
    w_low = np.where(np.asarray(stop_flag, dtype=bool), 0.0, params.idle_speed)
    w_eng = np.where(w_pump >= params.stall_speed, w_pump, w_low)
    return _scalar(w_eng), _scalar(gear)


def engine_torque_limits(w_eng, params):
    """Engine torque limits: flat torque, then flat power; zero when off"""
    w = np.asarray(w_eng, dtype=float)
    running = w > 0
    t_power = np.divide(
        params.eng_power_max, w, out=np.full(w.shape, np.inf), where=running
    )
    t_max = np.where(running, np.minimum(params.eng_torque_peak, t_power), 0.0)
    t_min = np.where(running, params.eng_torque_drag, 0.0)
    return t_min, t_max


def bsg_torque_limits(w_eng, params):
    """Symmetric BSG torque limits (BSG shaft) from peak torque and power"""
    w_bsg = params.belt_ratio * np.asarray(w_eng, dtype=float)
    running = w_bsg > 0
    t_power = np.divide(
        params.bsg_power_max, w_bsg, out=np.full(w_bsg.shape, np.inf), where=running
    )
    t_max = np.where(running, np.minimum(params.bsg_torque_peak, t_power), 0.0)
    return -t_max, t_max


def torque_limits(w_eng, params):
    """All four limit curves at the engine speed w_eng

    Returns
    -------
    tuple
        (T_eng_min, T_eng_max, T_bsg_min, T_bsg_max) in Nm

    """
    te_min, te_max = engine_torque_limits(w_eng, params)
    tb_min, tb_max = bsg_torque_limits(w_eng, params)
    return _scalar(te_min), _scalar(te_max), _scalar(tb_min), _scalar(tb_max)


def engine_efficiency(t_eng, w_eng, params):
    """Bell-shaped brake efficiency surface of the engine"""
    dt = (np.asarray(t_eng, dtype=float) - params.eng_torque_opt) / params.eng_torque_width
    dw = (np.asarray(w_eng, dtype=float) - params.eng_speed_opt) / params.eng_speed_width
    bell = np.exp(-(dt**2 + dw**2))
    return params.eng_eta_min + (params.eng_eta_peak - params.eng_eta_min) * bell


def _fuel_rate(t_eng, w_eng, params):
    t = np.asarray(t_eng, dtype=float)
    w = np.asarray(w_eng, dtype=float)
    idle = params.idle_fuel_rate * w / params.idle_speed
    load = np.maximum(t, 0.0) * w / (engine_efficiency(t, w, params) * params.q_lhv)
    # fuel cut-off when motored, nothing when the engine is off
    return np.where((w > 0) & (t >= 0), idle + load, 0.0)


def fuel_rate(t_eng, w_eng, params):
    """Fuel mass flow of the Willans-style engine map

    mdot = idle(w) + T w / (eta(T, w) Q_lhv) for T >= 0 with
    idle(w) = idle_fuel_rate w / w_idle, fuel cut-off (zero) for T < 0 and
    zero for the engine off (w = 0).

    Parameters
    ----------
    t_eng : float or numpy.array
        Engine torque (Nm)
    w_eng : float or numpy.array
        Engine speed (rad/s)
    params : VehicleParams

    Returns
    -------
    float or numpy.array
        Fuel rate in kg/s

    Raises
    ------
    InfeasibleControlError
        If the torque is outside the engine limit curves

    """
    t = np.asarray(t_eng, dtype=float)
    w = np.asarray(w_eng, dtype=float)
    if np.any(w < 0):
        raise ValueError("Engine speed must not be negative")
    t_min, t_max = engine_torque_limits(w, params)
    running = w > 0
    if np.any(running & (t > t_max + TORQUE_TOL * (1 + np.abs(t_max)))):
        raise InfeasibleControlError("Engine torque above T_eng_max", bound="T_eng_max")
    if np.any(running & (t < t_min - TORQUE_TOL * (1 + np.abs(t_min)))):
        raise InfeasibleControlError("Engine torque below T_eng_min", bound="T_eng_min")
    return _scalar(_fuel_rate(t, w, params))


def _bsg_power(t_bsg, w_eng, params):
    t = np.asarray(t_bsg, dtype=float)
    w_bsg = params.belt_ratio * np.asarray(w_eng, dtype=float)
    eta = params.eta_bsg_map(w_bsg, t)
    p_mech = t * w_bsg
    return np.where(t < 0, p_mech * eta, np.where(t > 0, p_mech / eta, 0.0))


def bsg_electrical_power(t_bsg, w_eng, params):
    """Electrical power of the BSG at the battery terminals

    P = T w_bsg eta for regen (T < 0) and P = T w_bsg / eta for motoring,
    with w_bsg = r_belt w_eng.

    Raises
    ------
    InfeasibleControlError
        If the torque is outside the BSG limits at w_bsg

    """
    t = np.asarray(t_bsg, dtype=float)
    t_min, t_max = bsg_torque_limits(w_eng, params)
    if np.any(t > t_max + TORQUE_TOL * (1 + np.abs(t_max))):
        raise InfeasibleControlError("BSG torque above T_bsg_max", bound="T_bsg_max")
    if np.any(t < t_min - TORQUE_TOL * (1 + np.abs(t_min))):
        raise InfeasibleControlError("BSG torque below T_bsg_min", bound="T_bsg_min")
    return _scalar(_bsg_power(t, w_eng, params))


def _battery_current(soc, p_bsg, params):
    """Battery current and feasibility mask (no exception)"""
    p = np.asarray(p_bsg, dtype=float)
    voc = params.voc_map(np.asarray(soc, dtype=float))
    disc = voc**2 - 4 * params.r0 * p
    ok = disc >= 0
    # numerically stable root of R0 I^2 - Voc I + P = 0
    current = 2 * p / (voc + np.sqrt(np.where(ok, disc, 0.0)))
    return current, ok


def battery_step(soc, p_bsg, params):
    """Battery current and SoC derivative of the zero-order circuit model

    Parameters
    ----------
    soc : float or numpy.array
        State of charge (fraction)
    p_bsg : float or numpy.array
        Terminal power (W), positive when discharging
    params : VehicleParams

    Returns
    -------
    tuple
        (I_batt in A, dsoc/dt in 1/s); the derivative includes the
        auxiliary current bias

    Raises
    ------
    BatteryPowerLimitError
        If the discriminant Voc^2 - 4 R0 P is negative

    """
    soc = np.asarray(soc, dtype=float)
    if np.any((soc < 0) | (soc > 1)):
        raise ValueError("State of charge must lie in [0, 1]")
    current, ok = _battery_current(soc, p_bsg, params)
    if not np.all(ok):
        raise BatteryPowerLimitError(
            "Battery power above the limit of {:.1f} W".format(params.battery_power_limit)
        )
    dsoc = -(current + params.i_bias) / params.c_nom
    return _scalar(current), _scalar(dsoc)


def driveline_force(v, t_pt, params):
    """Tractive force at the wheels for the powertrain torque t_pt

    T_out = r_f r_gr T_pt eta for traction and r_f r_gr T_pt / eta when
    the wheels drive the powertrain (regen and friction braking referred
    to the crank).

    Returns
    -------
    tuple
        (F_trc in N, T_out in Nm)

    """
    t = np.asarray(t_pt, dtype=float)
    ratio = params.final_drive * gear_ratio(v, params)
    eta = params.eta_tran_map(turbine_speed(v, params), t)
    t_out = np.where(t >= 0, ratio * t * eta, ratio * t / eta)
    return _scalar(t_out / params.wheel_radius), _scalar(t_out)


def driveline_torque(v, force, params):
    """Powertrain torque needed for a wheel force (inverse of driveline_force)

    Map efficiencies are taken at zero torque; the result is used to fit
    control grids, not to evaluate the plant.
    """
    f = np.asarray(force, dtype=float)
    ratio = params.final_drive * gear_ratio(v, params)
    eta = params.eta_tran_map(turbine_speed(v, params), np.zeros_like(f))
    t_wheel = f * params.wheel_radius / ratio
    return _scalar(np.where(f >= 0, t_wheel / eta, t_wheel * eta))


def road_load(v, grade, params):
    """Steady-speed resistance: aerodynamic drag, rolling and grade force"""
    v = np.asarray(v, dtype=float)
    grade = np.asarray(grade, dtype=float)
    aero = 0.5 * params.drag_coeff * params.air_density * params.frontal_area * v**2
    weight = params.mass * params.gravity
    rolling = weight * np.cos(grade) * params.rolling_coeff_map(v)
    return _scalar(aero + rolling + weight * np.sin(grade))
