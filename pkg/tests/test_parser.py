import logging

import numpy as np
import pandas as pd
import pytest

from utils.errors import DataIOError, StructuralError, ValidationError
from utils.logger import LOGGER_NAME
from utils.parser import MaximaDataset, parse_maxima_frame, project_equirectangular, read_dataset
from utils.validator import DataValidator


def _long_frame():
    rows = []
    for rep in range(3):
        for sid, x, y in (("s1", 0.0, 0.0), ("s2", 3.0, 4.0)):
            for leaf in ("A", "B"):
                rows.append((sid, x, y, leaf, rep, 1.0 + rep + (leaf == "B")))
    return pd.DataFrame(rows, columns=["site_id", "x", "y", "leaf", "replicate", "value"])


def test_parse_long_frame():
    data = parse_maxima_frame(_long_frame())
    assert data.site_ids == ("s1", "s2")
    assert data.leaves == ("A", "B")
    assert data.values.shape == (2, 2, 3)
    assert data.values[1, 0, 2] == 4.0
    assert data.h_max == pytest.approx(5.0)
    assert data.sites["s2"].x == 3.0


def test_missing_rows_become_nan(caplog):
    caplog.set_level(logging.WARNING, logger=LOGGER_NAME)
    frame = _long_frame().iloc[1:]
    data = parse_maxima_frame(frame)
    assert np.isnan(data.values[0, 0, 0])
    report = data.missing_report()
    assert int(report["missing"].sum()) == 1
    assert any("缺失" in r.getMessage() for r in caplog.records)


def test_all_problems_reported_together():
    frame = _long_frame()
    frame["value"] = frame["value"].astype(object)
    frame.loc[0, "value"] = "abc"
    frame.loc[1, "x"] = 9.0
    frame = pd.concat([frame, frame.iloc[[5]]])
    with pytest.raises(ValidationError) as info:
        parse_maxima_frame(frame)
    assert len(info.value.violations) == 3


def test_missing_columns_rejected():
    with pytest.raises(ValidationError):
        parse_maxima_frame(_long_frame().drop(columns=["leaf"]))


def test_unit_frechet_requires_positive_values():
    frame = _long_frame()
    frame.loc[3, "value"] = -1.0
    with pytest.raises(ValidationError):
        parse_maxima_frame(frame, require_positive=True)
    assert parse_maxima_frame(frame).values.min() == -1.0


def test_lonlat_projection():
    xy = project_equirectangular([0.0, 1.0], [0.0, 0.0], lon0=0.0, lat0=0.0)
    assert xy[1, 0] == pytest.approx(6371.0 * np.pi / 180.0)
    assert xy[1, 1] == pytest.approx(0.0)


def test_align_and_roundtrip():
    data = parse_maxima_frame(_long_frame())
    swapped = data.align_to(["B", "A"])
    assert np.array_equal(swapped.values[0], data.values[1])
    with pytest.raises(StructuralError):
        data.align_to(["A", "C"])
    again = parse_maxima_frame(data.to_frame())
    assert np.array_equal(again.values, data.values)
    assert again.digest() == data.digest()


def test_dataset_shape_checked():
    with pytest.raises(StructuralError):
        MaximaDataset(("s",), np.zeros((1, 2)), ("A",), np.zeros((2, 1, 3)))


def test_read_dataset(tmp_path):
    path = tmp_path / "maxima.csv"
    _long_frame().to_csv(path, index=False)
    assert read_dataset(str(path)).n_rep == 3
    with pytest.raises(DataIOError):
        read_dataset(str(tmp_path / "none.csv"))


def test_short_record_logs_validation_report(caplog):
    caplog.set_level(logging.WARNING, logger=LOGGER_NAME)
    data = parse_maxima_frame(_long_frame(), name="short.csv")
    assert data.n_rep == 3
    messages = [r.getMessage() for r in caplog.records]
    assert any("数据质量校验报告" in m and "[short.csv] 重复数 3 少于建议的最小值 20" in m
               for m in messages)


def test_validator_report_lists_errors_and_warnings():
    validator = DataValidator()
    assert validator.validate_row_count(25, 20, "x")
    assert "所有检查通过" in validator.get_report()
    validator.validate_row_count(5, 20, "x")
    validator.validate_not_empty(pd.DataFrame(), "y")
    report = validator.get_report()
    assert not validator.passed
    assert "[ERROR] [y] 数据为空" in report
    assert "[WARN]  [x] 重复数 5 少于建议的最小值 20" in report
