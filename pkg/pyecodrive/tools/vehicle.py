"""
Vehicle parameter set of the mild-hybrid plant

All physical constants and parametric maps live in one immutable
dataclass. Maps are given either as a scalar (constant map) or as
sorted breakpoint/value arrays; they are evaluated with clipping at the
breakpoint range (no extrapolation).

"""

import dataclasses
from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator


class ParameterError(ValueError):
    """Error for invalid or unknown vehicle parameters"""

    pass


class ParamMap:
    """Constant, 1-D or 2-D parameter map

    Parameters
    ----------
    value : float
        Constant value, used when no breakpoints are given
    breakpoints : tuple of sequences, optional
        One (1-D) or two (2-D) ascending breakpoint arrays
    values : sequence, optional
        Map values, nested for 2-D maps (first index along the first
        breakpoint array)

    """

    def __init__(self, value, breakpoints=(), values=()):
        self.value = float(value)
        self.breakpoints = tuple(np.asarray(bp, dtype=float) for bp in breakpoints)
        self.values = np.asarray(values, dtype=float)
        self._interp = None
        if len(self.breakpoints) == 2:
            self._interp = RegularGridInterpolator(
                self.breakpoints, self.values, bounds_error=False, fill_value=None
            )

    @property
    def is_constant(self):
        return len(self.breakpoints) == 0

    def all_values(self):
        """All values the map can take (for validation)"""
        if self.is_constant:
            return np.array([self.value])
        return self.values.ravel()

    def __call__(self, *args):
        if self.is_constant:
            shape = np.broadcast(*[np.asarray(a) for a in args]).shape
            return np.full(shape, self.value)
        if len(self.breakpoints) == 1:
            bp = self.breakpoints[0]
            return np.interp(np.asarray(args[0], dtype=float), bp, self.values)
        xs = np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in args])
        pts = np.stack(
            [np.clip(x, bp[0], bp[-1]) for x, bp in zip(xs, self.breakpoints)],
            axis=-1,
        )
        return self._interp(pts)


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants and maps of the mild-hybrid (P0) vehicle

    All values in SI units. The engine fuel map is a Willans-style surface
    with a bell-shaped efficiency peaking at eng_eta_peak; the remaining
    maps default to constants and can be replaced by breakpoint tables.
    """

    # chassis and road load
    mass: float = 1600.0
    drag_coeff: float = 0.30
    frontal_area: float = 2.2
    air_density: float = 1.225
    rolling_coeff: float = 0.009
    rolling_coeff_speed_bp: Tuple[float, ...] = ()
    rolling_coeff_values: Tuple[float, ...] = ()
    gravity: float = 9.81

    # driveline
    wheel_radius: float = 0.32
    final_drive: float = 3.2
    gear_ratios: Tuple[float, ...] = (4.0, 2.5, 1.6, 1.2, 1.0, 0.8)
    gear_thresholds: Tuple[float, ...] = (0.0, 4.0, 8.0, 12.0, 17.0, 25.0)
    eta_tran: float = 0.95
    eta_tran_speed_bp: Tuple[float, ...] = ()
    eta_tran_torque_bp: Tuple[float, ...] = ()
    eta_tran_values: Tuple[Tuple[float, ...], ...] = ()
    slip_speed: float = 0.0
    lockup_speed: float = 2.0

    # belted starter generator
    belt_ratio: float = 2.5
    eta_bsg: float = 0.85
    eta_bsg_speed_bp: Tuple[float, ...] = ()
    eta_bsg_torque_bp: Tuple[float, ...] = ()
    eta_bsg_values: Tuple[Tuple[float, ...], ...] = ()
    bsg_torque_peak: float = 20.0
    bsg_power_max: float = 9000.0

    # battery
    voc: float = 48.0
    voc_soc_bp: Tuple[float, ...] = ()
    voc_values: Tuple[float, ...] = ()
    r0: float = 0.05
    c_nom: float = 28800.0
    i_bias: float = 0.0

    # engine
    q_lhv: float = 42.6e6
    eng_eta_peak: float = 0.34
    eng_eta_min: float = 0.10
    eng_torque_opt: float = 140.0
    eng_torque_width: float = 150.0
    eng_speed_opt: float = 250.0
    eng_speed_width: float = 250.0
    idle_fuel_rate: float = 1.5e-4
    eng_torque_peak: float = 250.0
    eng_power_max: float = 120e3
    eng_torque_drag: float = -30.0
    idle_speed: float = 80.0
    stall_speed: float = 70.0

    def __post_init__(self):
        for name in ("mass", "wheel_radius", "c_nom", "q_lhv", "r0"):
            if not getattr(self, name) > 0:
                raise ParameterError("{} must be positive".format(name))
        for name in ("final_drive", "belt_ratio", "idle_speed", "eng_torque_peak"):
            if not getattr(self, name) > 0:
                raise ParameterError("{} must be positive".format(name))
        if len(self.gear_ratios) == 0:
            raise ParameterError("At least one gear ratio required")
        if len(self.gear_thresholds) != len(self.gear_ratios):
            raise ParameterError("One gear threshold per gear ratio required")
        if np.any(np.diff(self.gear_thresholds) <= 0):
            raise ParameterError("Gear schedule thresholds must be strictly increasing")
        for name in ("eta_tran_map", "eta_bsg_map"):
            vals = getattr(self, name).all_values()
            if np.any(vals <= 0) or np.any(vals > 1):
                raise ParameterError("Efficiency map {} outside (0, 1]".format(name))
        if not 0 < self.eng_eta_min < self.eng_eta_peak <= 1:
            raise ParameterError("Engine efficiency requires 0 < eta_min < eta_peak <= 1")
        if self.eng_torque_drag > 0:
            raise ParameterError("eng_torque_drag must not be positive")
        if self.bsg_torque_peak < 0 or self.bsg_power_max < 0:
            raise ParameterError("BSG limits must not be negative")
        if self.stall_speed > self.idle_speed:
            raise ParameterError("stall_speed must not exceed idle_speed")
        if np.any(self.voc_map.all_values() <= 0):
            raise ParameterError("Open-circuit voltage must be positive")

    @cached_property
    def rolling_coeff_map(self):
        return ParamMap(
            self.rolling_coeff,
            self._bp(self.rolling_coeff_speed_bp),
            self.rolling_coeff_values,
        )

    @cached_property
    def eta_tran_map(self):
        return ParamMap(
            self.eta_tran,
            self._bp(self.eta_tran_speed_bp, self.eta_tran_torque_bp),
            self.eta_tran_values,
        )

    @cached_property
    def eta_bsg_map(self):
        return ParamMap(
            self.eta_bsg,
            self._bp(self.eta_bsg_speed_bp, self.eta_bsg_torque_bp),
            self.eta_bsg_values,
        )

    @cached_property
    def voc_map(self):
        return ParamMap(self.voc, self._bp(self.voc_soc_bp), self.voc_values)

    @property
    def n_gears(self):
        return len(self.gear_ratios)

    @property
    def battery_power_limit(self):
        """Largest deliverable terminal power at the nominal voltage"""
        return self.voc**2 / (4 * self.r0)

    @staticmethod
    def _bp(*breakpoints):
        if any(len(bp) == 0 for bp in breakpoints):
            return ()
        return breakpoints

    def replace(self, **changes):
        """Copy with some parameters changed"""
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return {
            fld.name: _to_builtin(getattr(self, fld.name))
            for fld in dataclasses.fields(self)
        }

    @classmethod
    def from_dict(cls, content):
        """Build the parameter set from a flat dictionary

        Unknown keys raise a ParameterError, lists are converted to tuples.
        """
        known = {fld.name for fld in dataclasses.fields(cls)}
        unknown = sorted(set(content) - known)
        if unknown:
            raise ParameterError("Unknown parameter(s): {}".format(", ".join(unknown)))
        return cls(**{key: _to_tuple(val) for key, val in content.items()})


def _to_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(_to_tuple(v) for v in value)
    return value


def _to_builtin(value):
    if isinstance(value, tuple):
        return [_to_builtin(v) for v in value]
    return value
