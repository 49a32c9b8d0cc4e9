import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qmpath import io

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


class TestTable:
    def test_layout(self, tmp_path):
        path = io.write_table(tmp_path / "t.csv", "demo", ("a", "b"), [(1, 0.1), (2, 1 / 3)])
        lines = path.read_text().splitlines()
        assert lines[0] == "# schema=demo/1"
        assert lines[1] == "a,b"
        assert lines[3] == "2,0.33333333333333331"

    @given(st.lists(st.tuples(finite, finite), min_size=1, max_size=20))
    def test_round_trip(self, tmp_path_factory, rows):
        path = io.write_table(tmp_path_factory.mktemp("t") / "t.csv", "demo", ("a", "b"), rows)
        schema, cols, data = io.read_table(path)
        assert schema == "demo/1" and cols == ["a", "b"]
        np.testing.assert_array_equal(data, np.array(rows, dtype=float))

    def test_nan_round_trip(self, tmp_path):
        path = io.write_table(tmp_path / "t.csv", "demo", ("a",), [(math.nan,), (1.0,)])
        assert np.isnan(io.read_table(path)[2][0, 0])

    def test_row_width_checked(self, tmp_path):
        with pytest.raises(ValueError):
            io.write_table(tmp_path / "t.csv", "demo", ("a", "b"), [(1.0,)])

    def test_json_format(self, tmp_path):
        path = io.write_table(tmp_path / "t.csv", "demo", ("a",), np.array([[0.5]]), fmt="json")
        assert path.suffix == ".json"
        doc = json.loads(path.read_text())
        assert doc == {"schema": "demo/1", "columns": ["a"], "rows": [[0.5]]}

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ValueError):
            io.write_table(tmp_path / "t.csv", "demo", ("a",), [(1,)], fmt="xml")

    def test_missing_schema_line(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("a\n1\n")
        with pytest.raises(ValueError):
            io.read_table(p)


class TestJson:
    def test_numpy_and_nonfinite(self, tmp_path):
        path = io.write_json(tmp_path / "d.json", {"b": np.float64(0.1), "a": np.arange(2),
                                                   "c": math.inf, "d": np.bool_(True)})
        doc = json.loads(path.read_text())
        assert doc == {"a": [0, 1], "b": 0.1, "c": "inf", "d": True}
        assert path.read_text().index('"a"') < path.read_text().index('"b"')

    @given(finite)
    def test_float_exact(self, tmp_path_factory, v):
        path = io.write_json(tmp_path_factory.mktemp("j") / "d.json", {"v": v})
        assert json.loads(path.read_text())["v"] == v
