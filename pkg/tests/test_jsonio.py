import json

from hypothesis import given, strategies as st

from filippov.jsonio import TIMESTAMP_KEY, document, dumps, strip_timestamp


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_floats_round_trip_exactly(v):
    assert json.loads(dumps({"v": v}))["v"] == v


def test_keys_sorted_and_stable():
    a = dumps({"b": 1, "a": [1.5, {"z": None, "y": True}]})
    b = dumps({"a": [1.5, {"y": True, "z": None}], "b": 1})
    assert a == b
    assert a.index('"a"') < a.index('"b"')


def test_non_finite_values_become_strings():
    assert json.loads(dumps([float("inf"), float("nan")])) == ["inf", "nan"]


def test_document_and_timestamp():
    doc = document("catalog", {"command": "catalog"}, {"x": 1})
    assert doc["schema_version"] == 1 and TIMESTAMP_KEY in doc
    assert TIMESTAMP_KEY not in strip_timestamp(dumps(doc))
