import json
import os

import numpy as np
import pandas as pd
import pytest

from storage.csv_storage import CsvStorage, read_frame
from utils.errors import DataIOError


@pytest.fixture
def storage(tmp_path):
    return CsvStorage({"storage": {"output_dir": str(tmp_path / "out")}})


def test_save_frame_fixed_format(storage):
    frame = pd.DataFrame({"a": [1, 2], "b": [0.1 + 0.2, 1.0 / 3.0]})
    path = storage.save_frame(frame, "table")
    with open(path, encoding="utf-8") as f:
        assert f.read() == "a,b\n1,0.3\n2,0.3333333333\n"
    assert storage.written == [path]
    assert not [n for n in os.listdir(os.path.dirname(path)) if n.startswith(".tmp_")]


def test_rewrite_is_byte_identical(storage):
    frame = pd.DataFrame({"x": np.linspace(0, 1, 5)})
    path = storage.save_frame(frame, "x")
    first = open(path, "rb").read()
    storage.save_frame(frame, "x")
    assert open(path, "rb").read() == first


def test_json_converts_numpy_and_sorts_keys(storage):
    path = storage.save_json({"b": np.float64(1.5), "a": np.int64(2), "c": np.array([1, 2]),
                              "d": np.float64("nan")}, "summary", subdir="sub")
    assert os.path.basename(os.path.dirname(path)) == "sub"
    text = open(path, encoding="utf-8").read()
    assert list(json.loads(text)) == ["a", "b", "c", "d"]
    assert json.loads(text)["d"] is None


def test_provenance_lists_outputs(storage):
    storage.save_frame(pd.DataFrame({"a": [1]}), "sample")
    path = storage.save_provenance("simulate", "abc", 7, "1.0.0", extra={"n_rep": 1})
    payload = json.load(open(path, encoding="utf-8"))
    assert payload["outputs"] == ["sample.csv"]
    assert payload["seed"] == 7
    assert payload["n_rep"] == 1
    assert os.path.basename(path) == "provenance_simulate.json"


def test_safe_name():
    assert CsvStorage._safe_name("trace chain/0:alpha") == "trace_chain_0_alpha"


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    storage = CsvStorage({"storage": {"output_dir": str(blocker / "out")}})
    with pytest.raises(DataIOError):
        storage.save_frame(pd.DataFrame({"a": [1]}), "t")


def test_read_frame_missing(tmp_path):
    with pytest.raises(DataIOError):
        read_frame(str(tmp_path / "missing.csv"))
