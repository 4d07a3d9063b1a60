"""
Methods to load routes, vehicle parameters, perturbations and stored
trajectories

"""

import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from pyecodrive.core.constants import (
    DEFAULT_STEP,
    FIXTURE_ROUTES,
    PERTURBATION_COLUMNS,
    PYECODRIVE_PATH,
    ROUTE_COLUMNS,
    STORAGE_FORMAT,
    TRAJECTORY_COLUMNS,
    V_FLOOR,
)
from pyecodrive.core.dpsystem import Trajectory
from pyecodrive.core.route import Perturbation, RawRoute, RouteError, RoutePoint, resample
from pyecodrive.tools.vehicle import ParameterError, VehicleParams


# Exceptions
class ReadError(Exception):
    """Base class for errors occuring while reading pyecodrive data"""

    pass


_TRUE_FLAGS = {"1", "true", "yes", "y", "t"}
_FALSE_FLAGS = {"0", "false", "no", "n", "f", ""}


def _get_file_format(file_name):
    """Helper function to get the format of a stored file"""
    given_extension = Path(file_name).suffix.lstrip(".")
    for format_key, format_extension in STORAGE_FORMAT.items():
        if given_extension.lower() in format_extension:
            return format_key
    raise ValueError("Unkown format of stored file {}".format(file_name))


def _data_lines(path):
    """Source line numbers (1-based) of the header and the data rows

    Blank lines and lines starting with '#' are skipped, as done by
    pandas.read_csv with comment='#'.
    """
    lines = []
    with Path(path).open("r", encoding="utf-8") as src:
        for nr, line in enumerate(src, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            lines.append(nr)
    return lines


def _parse_flag(value, line):
    text = str(value).strip().lower()
    if text in _TRUE_FLAGS:
        return True
    if text in _FALSE_FLAGS or text == "nan":
        return False
    raise RouteError("Invalid stop flag '{}'".format(value), line=line)


def _read_table(path, columns, what):
    """Read a commented csv table and check its header"""
    path = Path(path)
    if not path.is_file():
        raise ReadError("{} file {} not found".format(what, path))
    try:
        data = pd.read_csv(
            path, comment="#", skipinitialspace=True, dtype=str, keep_default_na=False
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise ReadError("Can not parse {} file {}: {}".format(what, path, err))
    data.columns = [str(col).strip() for col in data.columns]
    missing = [col for col in columns if col not in data.columns]
    if missing:
        raise ReadError(
            "{} file {} misses the column(s) {}".format(what, path, ", ".join(missing))
        )
    return data


def _numeric(data, column, lines):
    values = pd.to_numeric(data[column].str.strip(), errors="coerce")
    bad = np.flatnonzero(values.isna().values)
    if len(bad):
        row = bad[0]
        raise RouteError(
            "Can not parse '{}' in column {}".format(data[column].iloc[row], column),
            line=lines[row],
        )
    return values.values.astype(float)


def load_route(path, v_floor=V_FLOOR, meta=None):
    """Load and validate a raw route from a csv file

    The file needs the header d_m,v_min_mps,v_max_mps,grade_rad,stop with
    one row per raw route point. Lines starting with '#' are ignored.

    Parameters
    ----------
    path : pathlib.Path or string
        Route csv file
    v_floor : float, optional
        Speed floor for the validation of non-stop points
    meta : RunMetaData, optional
        If given, the file access is recorded in the history

    Returns
    -------
    RawRoute

    Raises
    ------
    RouteError
        For unparsable values and invalid points, the message names the
        offending line of the file
    ReadError
        For missing files or columns

    """
    path = Path(path)
    data = _read_table(path, ROUTE_COLUMNS, "Route")
    lines = _data_lines(path)[1:]
    if len(lines) != len(data):
        # quoted multi-line fields or similar, fall back to row numbers
        lines = list(range(2, len(data) + 2))

    cols = {col: _numeric(data, col, lines) for col in ROUTE_COLUMNS[:-1]}
    stops = [_parse_flag(val, line) for val, line in zip(data["stop"], lines)]
    points = [
        RoutePoint(
            d=float(d), v_min=float(v_min), v_max=float(v_max), grade=float(grade), stop=stop
        )
        for d, v_min, v_max, grade, stop in zip(
            cols["d_m"], cols["v_min_mps"], cols["v_max_mps"], cols["grade_rad"], stops
        )
    ]
    raw = RawRoute(points, lines=lines, v_floor=v_floor)
    logging.info("Load route from {} ({} points)".format(path, len(raw)))
    if meta:
        meta._add_fileio("Route loaded from {}".format(path))
    return raw


def load_perturbations(path, meta=None):
    """Load speed-limit perturbations from a csv file

    Columns d_m, v_max_mps and activate_at_stage; '#' comments are ignored.

    Returns
    -------
    list of Perturbation

    """
    path = Path(path)
    data = _read_table(path, PERTURBATION_COLUMNS, "Perturbation")
    lines = _data_lines(path)[1:]
    if len(lines) != len(data):
        lines = list(range(2, len(data) + 2))
    d = _numeric(data, "d_m", lines)
    v_max = _numeric(data, "v_max_mps", lines)
    stage = _numeric(data, "activate_at_stage", lines)
    perts = []
    for dist, vel, stg, line in zip(d, v_max, stage, lines):
        if stg < 0 or stg != int(stg):
            raise RouteError("activate_at_stage must be a non-negative integer", line=line)
        if vel <= 0:
            raise RouteError("Perturbed v_max must be positive", line=line)
        perts.append(Perturbation(d=float(dist), v_max=float(vel), activate_at_stage=int(stg)))
    logging.info("Load {} perturbation(s) from {}".format(len(perts), path))
    if meta:
        meta._add_fileio("Perturbations loaded from {}".format(path))
    return perts


def load_params(path=None, meta=None):
    """Load vehicle parameters from a flat json file

    Parameters
    ----------
    path : pathlib.Path or string, optional
        Parameter file, default: the packaged default_vehicle.json
    meta : RunMetaData, optional

    Returns
    -------
    VehicleParams

    Raises
    ------
    ParameterError
        For unknown keys or violated parameter invariants
    ReadError
        If the file is missing or not valid json

    """
    path = Path(path) if path else PYECODRIVE_PATH["vehicle"]
    if not path.is_file():
        raise ReadError("Parameter file {} not found".format(path))
    try:
        with path.open("r", encoding="utf-8") as pf:
            content = json.load(pf)
    except json.JSONDecodeError as err:
        raise ReadError("Parameter file {} is not valid json: {}".format(path, err))
    if not isinstance(content, dict):
        raise ParameterError("Parameter file must hold a flat key/value object")
    params = VehicleParams.from_dict(content)
    logging.info("Load vehicle parameters from {}".format(path))
    if meta:
        meta._add_fileio("Vehicle parameters loaded from {}".format(path))
    return params


def load_trajectory(path, name=None):
    """Load a trajectory stored with Trajectory.save

    The format (csv or parquet) is derived from the file extension.
    """
    path = Path(path)
    if not path.is_file():
        raise ReadError("Trajectory file {} not found".format(path))
    if _get_file_format(path) == "txt":
        data = pd.read_csv(path)
    else:
        data = pd.read_parquet(path)
    missing = [col for col in TRAJECTORY_COLUMNS if col not in data.columns]
    if missing:
        raise ReadError("Trajectory file {} misses {}".format(path, ", ".join(missing)))
    logging.info("Load trajectory from {}".format(path))
    return Trajectory(data, name=name if name is not None else path.stem)


def load_fixture(name, dd=DEFAULT_STEP, v_floor=V_FLOOR, meta=None):
    """Load one of the packaged fixture routes resampled with step dd

    Parameters
    ----------
    name : str
        'flat', 'hilly' or 'mixed' (see FIXTURE_ROUTES)

    Returns
    -------
    Route

    """
    if name not in FIXTURE_ROUTES:
        raise ValueError(
            "Unknown fixture route '{}', available: {}".format(name, ", ".join(FIXTURE_ROUTES))
        )
    raw = load_route(PYECODRIVE_PATH[name], v_floor=v_floor, meta=meta)
    return resample(raw, dd=dd, v_floor=v_floor)


def load_test():
    """Returns the small flat test route

    The route is 2 km long with stops at both ends, constant speed limits
    and no grade, resampled with the default step of 10 m.

    Notes
    -----

        For development: the packaged routes under route_models can be
        used as examples of the route csv format.

    Returns
    -------

    Route

    """
    return load_fixture("flat")
