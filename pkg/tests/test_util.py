""" test cases for the util functions and the run manifest """

import json
import os
import sys
from pathlib import Path
from unittest.mock import patch

import numpy as np
import numpy.testing as npt
import pytest

TESTPATH = os.path.dirname(os.path.abspath(__file__))
sys.path.append(os.path.join(TESTPATH, ".."))

from pyecodrive.core.constants import OUTPUT_DIR_ENV  # noqa
from pyecodrive.tools.edutil import (  # noqa
    EvaluationCounter,
    dump_json,
    insert_node,
    resolve_output_dir,
    split_chunks,
    to_builtin,
    uniform_grid,
)
from pyecodrive.tools.runmetadata import RunMetaData  # noqa


def test_uniform_grid():
    npt.assert_allclose(uniform_grid(0.0, 1.0, 5), [0.0, 0.25, 0.5, 0.75, 1.0])
    grids = uniform_grid(np.array([0.0, 10.0]), np.array([2.0, 20.0]), 3)
    assert grids.shape == (2, 3)
    assert grids[1, -1] == 20.0
    npt.assert_array_equal(uniform_grid(np.array([1.0, 2.0]), 5.0, 1), [[1.0], [2.0]])
    with pytest.raises(ValueError):
        uniform_grid(0.0, 1.0, 0)


def test_insert_node():
    nodes = insert_node(np.linspace(0.3, 0.8, 11), 0.523)
    assert len(nodes) == 11
    assert 0.523 in nodes
    assert 0.5 not in nodes
    assert np.all(np.diff(nodes) > 0)
    with pytest.raises(ValueError):
        insert_node([0.3, 0.8], 0.9)


def test_split_chunks():
    assert split_chunks(range(6), 3) == [[0, 1], [2, 3], [4, 5]]
    assert split_chunks([1, 2], 5) == [[1], [2]]
    chunks = split_chunks(range(10), 4)
    assert sum(chunks, []) == list(range(10))
    assert all(chunks)
    assert split_chunks(range(3), 0) == [[0, 1, 2]]


def test_to_builtin():
    content = to_builtin(
        {
            "a": np.float64(1.5),
            "b": np.arange(3),
            "c": (np.int32(2), np.bool_(True)),
            "d": float("inf"),
            "e": Path("out"),
            1: None,
        }
    )
    assert content == {"a": 1.5, "b": [0, 1, 2], "c": [2, True], "d": "inf", "e": "out", "1": None}
    assert json.dumps(content)


def test_dump_json(tmpdir):
    path = dump_json({"ratio": np.float32(0.5), "nan": np.nan}, tmpdir.join("x.json"))
    with open(str(path)) as jf:
        assert json.load(jf) == {"ratio": 0.5, "nan": "nan"}


def test_resolve_output_dir(tmpdir):
    given = tmpdir.join("given")
    with patch.dict(os.environ, {OUTPUT_DIR_ENV: ""}):
        out = resolve_output_dir(str(given))
    assert out == Path(str(given))
    assert out.is_dir()

    env_dir = tmpdir.join("from_env")
    with patch.dict(os.environ, {OUTPUT_DIR_ENV: str(env_dir)}):
        out = resolve_output_dir(str(given))
    assert out == Path(str(env_dir))
    assert out.is_dir()


def test_evaluation_counter():
    counter = EvaluationCounter()
    counter.add("plant", 12)
    counter.add("plant")
    counter.add("ecms", np.int64(4))
    assert counter["plant"] == 13
    assert counter["unknown"] == 0
    assert counter.snapshot() == {"plant": 13, "ecms": 4}
    counter.reset()
    assert counter.snapshot() == {}


class TestRunMetaData:
    def test_new_manifest(self, tmpdir):
        meta = RunMetaData(
            location=str(tmpdir),
            name="flat",
            solver="benchmark",
            config={"gamma": np.float64(0.65)},
            logger_function=None,
        )
        assert meta.name == "flat"
        assert meta.solver == "benchmark"
        assert meta.config == {"gamma": 0.65}
        assert meta.description == "Manifest of a pyecodrive run"
        assert "pyecodrive_version" in meta.metadata["system"]
        assert len(meta.modification_history) == 1

    def test_history(self):
        meta = RunMetaData(logger_function=None)
        meta.note("first")
        meta._add_fileio("route read")
        meta.note("second")
        assert len(meta.history) == 3
        assert "second" in meta.history[0]
        assert len(meta.note_history) == 2
        assert len(meta.file_io_history) == 1

    def test_change_meta(self):
        meta = RunMetaData(name="flat", logger_function=None)
        meta.change_meta("name", "hilly")
        assert meta.name == "hilly"
        assert "METADATA_CHANGE" in meta.history[0]
        meta.change_meta("name", None)
        assert meta.name == "hilly"
        with pytest.raises(ValueError):
            meta.change_meta("history", "rewritten")

    def test_save_and_read(self, tmpdir):
        meta = RunMetaData(name="mixed", solver="lookahead", logger_function=None)
        meta.note("solved")
        path = meta.save(str(tmpdir))
        assert path.name == "manifest.json"

        reread = RunMetaData(location=str(path), solver="benchmark", logger_function=None)
        assert reread.name == "mixed"
        assert reread.solver == "benchmark"
        assert any("solved" in entry for entry in reread.history)
        assert 'from "lookahead"' in reread.history[0]

    def test_save_without_location(self):
        meta = RunMetaData(logger_function=None)
        assert meta.save() is None
