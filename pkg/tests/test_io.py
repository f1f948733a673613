import json
import math

import numpy as np
import pytest

from relcollapse.core import InvalidInput
from relcollapse.io import (canonical_json, content_hash, load_ini, parse_floats, read_config_echo, render_csv,
                            render_json, to_plain)


def test_to_plain_handles_numpy_and_non_finite():
    out = to_plain({"a": np.float64(1.5), "b": np.arange(3), "c": (np.bool_(True), math.inf, math.nan), "d": 1 + 2j})
    assert out == {"a": 1.5, "b": [0, 1, 2], "c": [True, "inf", "nan"], "d": {"re": 1.0, "im": 2.0}}
    json.dumps(out)


def test_hash_depends_on_config_and_payload():
    h = content_hash({"x": 1}, [1.0])
    assert h == content_hash({"x": 1}, [1.0])
    assert h != content_hash({"x": 2}, [1.0])
    assert h != content_hash({"x": 1}, [1.0 + 1e-16 * 4])


def test_canonical_json_is_key_order_independent():
    assert canonical_json({"b": 1, "a": 2}) == canonical_json({"a": 2, "b": 1})


def test_floats_round_trip_exactly(tmp_path):
    vals = [0.1, 1 / 3, 2.0 ** -1074, 1e308]
    text = render_csv({"k": 1}, ["v"], [[v] for v in vals])
    rows = [l for l in text.splitlines() if not l.startswith("#")][1:]
    assert [float(r) for r in rows] == vals
    p = tmp_path / "o.csv"
    p.write_text(text)
    assert read_config_echo(str(p)) == {"k": 1}
    doc = json.loads(render_json({"k": 1}, {"v": vals}))
    assert doc["payload"]["v"] == vals
    q = tmp_path / "o.json"
    q.write_text(render_json({"k": 2}, {}))
    assert read_config_echo(str(q)) == {"k": 2}


def test_missing_echo_and_bad_lists(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(InvalidInput):
        read_config_echo(str(p))
    with pytest.raises(InvalidInput):
        parse_floats("1,two")
    with pytest.raises(InvalidInput):
        load_ini(str(tmp_path / "missing.ini"))
    assert parse_floats("1; 2,3,") == [1.0, 2.0, 3.0]
