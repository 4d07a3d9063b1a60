"""
Route model: raw route points and the uniformly resampled route

The resampled Route is the input of all solvers. It is treated as
immutable; speed-limit perturbations create new Route instances.

"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from pyecodrive.core.constants import DEFAULT_STEP, ROUTE_COLUMNS, V_FLOOR


class RouteError(ValueError):
    """Invalid route data, carries the offending source line if known"""

    def __init__(self, message, line=None):
        if line is not None:
            message = "line {}: {}".format(line, message)
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class RoutePoint:
    """One raw route point: distance, speed envelope, grade and stop flag"""

    d: float
    v_min: float
    v_max: float
    grade: float = 0.0
    stop: bool = False


@dataclass(frozen=True)
class Perturbation:
    """Speed-limit cap from distance d onwards, known from a given stage on"""

    d: float
    v_max: float
    activate_at_stage: int = 0

    def is_active(self, stage):
        return self.activate_at_stage <= stage


class RawRoute(object):
    """Validated raw route points in distance order

    Parameters
    ----------
    points : list of RoutePoint
    lines : list of int, optional
        Source line numbers of the points, used in error messages
    v_floor : float, optional
        Speed floor, non-stop points must allow at least this speed

    """

    def __init__(self, points, lines=None, v_floor=V_FLOOR):
        self.points = list(points)
        self.lines = list(lines) if lines is not None else [None] * len(self.points)
        self.v_floor = v_floor
        self._validate()

    def _validate(self):
        if len(self.points) < 2:
            raise RouteError("A route needs at least two points")
        prev = None
        for pt, line in zip(self.points, self.lines):
            if not all(math.isfinite(val) for val in (pt.d, pt.v_min, pt.v_max, pt.grade)):
                raise RouteError("Non-finite value", line=line)
            if pt.d < 0:
                raise RouteError("Negative distance {}".format(pt.d), line=line)
            if prev is not None and pt.d <= prev:
                raise RouteError(
                    "Non-monotone distance {} after {}".format(pt.d, prev), line=line
                )
            if pt.v_min > pt.v_max:
                raise RouteError(
                    "v_min {} above v_max {}".format(pt.v_min, pt.v_max), line=line
                )
            if not pt.stop and pt.v_max < self.v_floor:
                raise RouteError(
                    "v_max {} below the speed floor {}".format(pt.v_max, self.v_floor),
                    line=line,
                )
            if not pt.stop and pt.v_min <= 0:
                raise RouteError("v_min must be positive away from stops", line=line)
            if abs(pt.grade) >= math.pi / 2:
                raise RouteError("Grade {} rad out of range".format(pt.grade), line=line)
            prev = pt.d

    def __len__(self):
        return len(self.points)

    def _column(self, name, dtype=float):
        return np.array([getattr(pt, name) for pt in self.points], dtype=dtype)

    @property
    def d(self):
        return self._column("d")

    @property
    def v_min(self):
        return self._column("v_min")

    @property
    def v_max(self):
        return self._column("v_max")

    @property
    def grade(self):
        return self._column("grade")

    @property
    def stop(self):
        return self._column("stop", dtype=bool)

    def as_frame(self):
        return _as_frame(self)


class Route(object):
    """Route resampled on a uniform distance grid

    Attributes
    ----------
    d : numpy.array
        Grid distances d_k = d_0 + k dd
    v_min, v_max : numpy.array
        Speed envelope at the grid points (m/s)
    grade : numpy.array
        Road grade (rad)
    stop : numpy.array of bool
        Stop flags; the first and the last point are always stops
    dd : float
        Step size (m)

    """

    def __init__(self, d, v_min, v_max, grade, stop, dd, v_floor=V_FLOOR):
        self.d = np.asarray(d, dtype=float)
        self.v_min = np.asarray(v_min, dtype=float)
        self.v_max = np.asarray(v_max, dtype=float)
        self.grade = np.asarray(grade, dtype=float)
        self.stop = np.asarray(stop, dtype=bool)
        self.dd = float(dd)
        self.v_floor = float(v_floor)
        for arr in (self.d, self.v_min, self.v_max, self.grade, self.stop):
            arr.setflags(write=False)
        self._validate()

    def _validate(self):
        n = len(self.d)
        if n < 2:
            raise RouteError("A resampled route needs at least two points")
        if any(len(arr) != n for arr in (self.v_min, self.v_max, self.grade, self.stop)):
            raise RouteError("Route arrays of unequal length")
        if np.any(np.diff(self.d) <= 0):
            raise RouteError("Route distances must be strictly increasing")
        if not np.allclose(np.diff(self.d), self.dd, rtol=1e-9, atol=1e-9):
            raise RouteError("Route grid must be uniform with step {}".format(self.dd))
        if not (self.stop[0] and self.stop[-1]):
            raise RouteError("The first and the last route point must be stops")
        if np.any(self.v_min > self.v_max):
            raise RouteError("v_min above v_max")
        moving = ~self.stop
        if np.any(self.v_max[moving] < self.v_floor) or np.any(self.v_min[moving] <= 0):
            raise RouteError("Speed envelope below the speed floor away from stops")

    @classmethod
    def from_arrays(cls, v_max, dd=DEFAULT_STEP, v_min=None, grade=0.0, stops=(), v_floor=V_FLOOR):
        """Route with the given envelope at d = 0, dd, 2 dd, ...

        Stops are given as grid indices; the end points are always stops
        and stop points get v_min = v_max = v_floor.
        """
        v_max = np.array(v_max, dtype=float)
        n = len(v_max)
        v_min = np.full(n, v_floor) if v_min is None else np.array(v_min, dtype=float)
        stop = np.zeros(n, dtype=bool)
        stop[list(stops)] = True
        stop[[0, -1]] = True
        v_min[stop] = v_floor
        v_max[stop] = v_floor
        return cls(
            d=np.arange(n) * dd,
            v_min=v_min,
            v_max=v_max,
            grade=np.broadcast_to(np.asarray(grade, dtype=float), (n,)).copy(),
            stop=stop,
            dd=dd,
            v_floor=v_floor,
        )

    @property
    def n_points(self):
        return len(self.d)

    @property
    def n_stages(self):
        return self.n_points - 1

    @property
    def length(self):
        return self.d[-1] - self.d[0]

    @property
    def points(self):
        return [
            RoutePoint(float(d), float(lo), float(hi), float(g), bool(s))
            for d, lo, hi, g, s in zip(self.d, self.v_min, self.v_max, self.grade, self.stop)
        ]

    def as_frame(self):
        return _as_frame(self)

    def replace(self, **changes):
        """Copy with some arrays replaced"""
        content = dict(
            d=self.d,
            v_min=self.v_min,
            v_max=self.v_max,
            grade=self.grade,
            stop=self.stop,
            dd=self.dd,
            v_floor=self.v_floor,
        )
        content.update(changes)
        return Route(**content)

    def __eq__(self, other):
        if not isinstance(other, Route):
            return NotImplemented
        return (
            self.dd == other.dd
            and self.v_floor == other.v_floor
            and all(
                np.array_equal(getattr(self, name), getattr(other, name))
                for name in ("d", "v_min", "v_max", "grade", "stop")
            )
        )

    def __hash__(self):
        return hash((self.n_points, self.dd, self.v_max.tobytes()))

    def __repr__(self):
        return "Route(n_points={}, dd={}, length={})".format(
            self.n_points, self.dd, self.length
        )


def _as_frame(route):
    return pd.DataFrame(
        {
            "d_m": route.d,
            "v_min_mps": route.v_min,
            "v_max_mps": route.v_max,
            "grade_rad": route.grade,
            "stop": route.stop.astype(int),
        },
        columns=ROUTE_COLUMNS,
    )


def resample(raw, dd=DEFAULT_STEP, v_floor=None):
    """Resample a raw route (or a Route) on a uniform grid

    The number of points is floor(L / dd) + 1 with L the route length.
    Speed limits are held from the previous raw point, v_max is
    additionally capped by all raw points strictly inside the following
    grid interval. The grade is interpolated linearly. Each raw stop is
    snapped to its nearest grid point (ties to the later one), the first
    and the last grid point are always stops, and stop points get
    v_min = v_max = v_floor.

    Parameters
    ----------
    raw : RawRoute or Route
    dd : float, optional
        Step size in m, default DEFAULT_STEP
    v_floor : float, optional
        Speed floor, defaults to the one of raw

    Returns
    -------
    Route

    """
    v_floor = raw.v_floor if v_floor is None else v_floor
    d_raw = raw.d
    length = d_raw[-1] - d_raw[0]
    if not dd > 0:
        raise RouteError("Step size must be positive")
    if dd > length:
        raise RouteError("Step size {} larger than the route length {}".format(dd, length))

    n = int(math.floor(length / dd + 1e-9)) + 1
    grid = d_raw[0] + np.arange(n) * dd

    hold = np.clip(np.searchsorted(d_raw, grid, side="right") - 1, 0, len(d_raw) - 1)
    v_min = raw.v_min[hold].copy()
    v_max = raw.v_max[hold].copy()

    # raw points strictly inside (d_k, d_k+1) tighten the limit at d_k
    interval = np.searchsorted(grid, d_raw, side="right") - 1
    for j, k in enumerate(interval):
        if 0 <= k < n - 1 and d_raw[j] > grid[k]:
            v_max[k] = min(v_max[k], raw.v_max[j])
    v_min = np.minimum(v_min, v_max)

    grade = np.interp(grid, d_raw, raw.grade)

    stop = np.zeros(n, dtype=bool)
    stop_idx = np.floor((d_raw[raw.stop] - d_raw[0]) / dd + 0.5).astype(int)
    stop[np.clip(stop_idx, 0, n - 1)] = True
    stop[[0, -1]] = True
    v_min[stop] = v_floor
    v_max[stop] = v_floor

    logging.debug(
        "Resampled route of {} raw points to {} points (dd = {} m)".format(
            len(d_raw), n, dd
        )
    )
    return Route(
        d=grid, v_min=v_min, v_max=v_max, grade=grade, stop=stop, dd=dd, v_floor=v_floor
    )


def apply_perturbations(route, perturbations, stage):
    """Route as known at the given stage

    Every perturbation with activate_at_stage <= stage caps v_max at all
    grid points with d >= its distance; stops keep the speed floor.

    Returns
    -------
    Route
        route itself if no perturbation is active

    """
    active = [pert for pert in perturbations if pert.is_active(stage)]
    if not active:
        return route
    v_max = route.v_max.copy()
    for pert in active:
        if pert.v_max < route.v_floor:
            raise RouteError(
                "Perturbation cap {} below the speed floor {}".format(
                    pert.v_max, route.v_floor
                )
            )
        affected = (route.d >= pert.d) & ~route.stop
        v_max[affected] = np.minimum(v_max[affected], pert.v_max)
    return route.replace(v_max=v_max, v_min=np.minimum(route.v_min, v_max))


def active_perturbations(perturbations, stage):
    """Key of the perturbations known at stage (indices of the active ones)"""
    return tuple(i for i, pert in enumerate(perturbations) if pert.is_active(stage))
