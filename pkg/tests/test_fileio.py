""" Testing the loading of routes, parameters, perturbations and trajectories
"""

import json
import os
import sys

import numpy as np
import pandas as pd
import pytest

TESTPATH = os.path.dirname(os.path.abspath(__file__))
sys.path.append(os.path.join(TESTPATH, ".."))

from pyecodrive.core.dpsystem import Trajectory  # noqa
from pyecodrive.core.fileio import (  # noqa
    ReadError,
    _get_file_format,
    load_fixture,
    load_params,
    load_perturbations,
    load_route,
    load_test,
    load_trajectory,
)
from pyecodrive.core.route import RouteError  # noqa
from pyecodrive.tools.runmetadata import RunMetaData  # noqa
from pyecodrive.tools.vehicle import ParameterError, VehicleParams  # noqa

ROUTE_HEADER = "d_m,v_min_mps,v_max_mps,grade_rad,stop\n"


@pytest.fixture()
def route_file(tmpdir):
    def write(body, header=ROUTE_HEADER):
        path = tmpdir.join("route.csv")
        path.write("# test route\n" + header + body)
        return str(path)

    return write


def test_load_route(route_file):
    path = route_file("0,1,10,0,1\n\n# a comment\n100,2,12,0.01,no\n200,1,10,0,true\n")
    raw = load_route(path)
    assert len(raw) == 3
    np.testing.assert_array_equal(raw.d, [0.0, 100.0, 200.0])
    assert raw.lines == [3, 6, 7]
    assert [pt.stop for pt in raw.points] == [True, False, True]


def test_route_errors_name_line(route_file):
    with pytest.raises(RouteError) as err:
        load_route(route_file("0,1,10,0,1\n100,2,12,0,maybe\n200,1,10,0,1\n"))
    assert err.value.line == 4
    assert "line 4" in str(err.value)

    with pytest.raises(RouteError) as err:
        load_route(route_file("0,1,10,0,1\n# gap\n100,2,fast,0,0\n200,1,10,0,1\n"))
    assert err.value.line == 5

    with pytest.raises(RouteError) as err:
        load_route(route_file("0,1,10,0,1\n100,2,12,0,0\n50,1,10,0,1\n"))
    assert err.value.line == 5


def test_route_read_errors(route_file, tmpdir):
    with pytest.raises(ReadError):
        load_route(str(tmpdir.join("missing.csv")))
    with pytest.raises(ReadError):
        load_route(route_file("0,1,10,1\n", header="d_m,v_min_mps,v_max_mps,stop\n"))


def test_route_fileio_recorded(route_file):
    meta = RunMetaData(name="route test")
    load_route(route_file("0,1,10,0,1\n100,1,10,0,1\n"))
    assert meta.file_io_history == []
    load_route(route_file("0,1,10,0,1\n100,1,10,0,1\n"), meta=meta)
    assert len(meta.file_io_history) == 1


def test_fixtures():
    flat = load_fixture("flat")
    assert flat.n_points == 201
    assert flat.length == 2000.0
    assert load_fixture("flat", dd=50.0).n_points == 41
    mixed = load_fixture("mixed")
    assert int(mixed.stop.sum()) == 8
    hilly = load_fixture("hilly")
    assert np.any(hilly.grade != 0)
    assert load_test() == flat
    with pytest.raises(ValueError):
        load_fixture("alpine")


def test_load_params(tmpdir):
    assert load_params() == VehicleParams()

    path = tmpdir.join("vehicle.json")
    path.write(json.dumps({"mass": 1500.0, "r0": 0.05}))
    params = load_params(str(path))
    assert params.mass == 1500.0
    assert params.r0 == 0.05

    path.write(json.dumps({"mass": 1500.0, "wheels": 4}))
    with pytest.raises(ParameterError):
        load_params(str(path))
    path.write("[1, 2]")
    with pytest.raises(ParameterError):
        load_params(str(path))
    path.write("{mass: 1500")
    with pytest.raises(ReadError):
        load_params(str(path))
    with pytest.raises(ReadError):
        load_params(str(tmpdir.join("none.json")))


def test_load_perturbations(tmpdir):
    path = tmpdir.join("perts.csv")
    path.write("# caps\nd_m,v_max_mps,activate_at_stage\n500,8.3,10\n1200,5.0,0\n")
    perts = load_perturbations(str(path))
    assert len(perts) == 2
    assert perts[0].d == 500.0
    assert perts[0].activate_at_stage == 10
    assert perts[1].is_active(0)

    path.write("d_m,v_max_mps,activate_at_stage\n500,8.3,1.5\n")
    with pytest.raises(RouteError) as err:
        load_perturbations(str(path))
    assert err.value.line == 2
    path.write("d_m,v_max_mps,activate_at_stage\n500,-1,2\n")
    with pytest.raises(RouteError):
        load_perturbations(str(path))


def test_get_file_format():
    assert _get_file_format("traj.csv") == "txt"
    assert _get_file_format("traj.TXT") == "txt"
    assert _get_file_format("traj.parquet") == "parquet"
    with pytest.raises(ValueError):
        _get_file_format("traj.xlsx")


def test_load_trajectory(tmpdir):
    data = pd.DataFrame(
        dict(
            k=[0, 1],
            d_m=[0.0, 10.0],
            v_mps=[1.0, 3.0],
            soc=[0.55, 0.549],
            T_eng_Nm=[40.0, np.nan],
            T_bsg_Nm=[2.0, np.nan],
            T_pt_Nm=[45.0, np.nan],
            fuel_kg=[1e-3, 0.0],
            t_s=[5.0, 0.0],
            cost=[2.4, 0.0],
        )
    )
    traj = Trajectory(data, name="written")
    path = traj.save(str(tmpdir.join("trajectory.csv")))
    loaded = load_trajectory(path)
    assert loaded.name == "trajectory"
    assert loaded.fuel_total == pytest.approx(traj.fuel_total)
    assert np.isnan(loaded.data.T_eng_Nm.iloc[-1])

    bad = tmpdir.join("bad.csv")
    bad.write("k,d_m\n0,0\n")
    with pytest.raises(ReadError):
        load_trajectory(str(bad))
