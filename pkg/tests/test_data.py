import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairgate import data
from fairgate.data import Column, FeaturePartition

TOY_SCHEMA = """\
# toy layout
missing: ?
column: age | numeric | max 100
column: color | categorical | red, green, blue
target: label | yes | no
column: size | numeric
"""


@pytest.fixture
def toy(tmp_path):
    schema = data.parse_schema(TOY_SCHEMA)
    path = tmp_path / "toy.csv"
    path.write_text("30, red, yes, 1.5\n| comment line\n40, blue, no., 2\n\n50, ?, yes, 3\n20, green, no, 4\n")
    return schema, path


def test_parse_schema_fields(toy):
    schema, _ = toy
    assert schema.labels == ("age", "color", "size")
    assert schema.feature("age").bound == 100
    assert schema.feature("size").bound is None
    assert schema.feature("color").levels == ("red", "green", "blue")
    assert schema.target == data.Target("label", "yes", "no")
    assert schema.target_position == 2


def test_schema_text_roundtrip(toy):
    schema, _ = toy
    again = data.parse_schema(schema.to_text())
    assert again.features == schema.features and again.target == schema.target


@pytest.mark.parametrize("text", [
    "column: a | weird\n",
    "column: a | categorical | x\n",
    "column: a | categorical | x, x\n",
    "column: a | numeric\ncolumn: a | numeric\n",
    "nonsense\n",
    "target: t | 1\ntarget: u | 1\n",
    "column: a | numeric | min 3\n",
])
def test_bad_schemas(text):
    with pytest.raises(data.DataError):
        data.parse_schema(text)


def test_load_csv_drops_missing_and_comments(toy):
    schema, path = toy
    d = data.load_csv(path, schema)
    assert d.row_count == 3
    assert d.values("age").tolist() == [30.0, 40.0, 20.0]
    assert d.values("color").tolist() == ["red", "blue", "green"]
    assert d.values("size").tolist() == [1.5, 2.0, 4.0]
    assert d.target.tolist() == [1, 0, 0]
    assert d.rows[0] == (30.0, "red", 1.5)


def test_load_csv_errors(toy, tmp_path):
    schema, _ = toy
    with pytest.raises(FileNotFoundError):
        data.load_csv(tmp_path / "none.csv", schema)
    bad = tmp_path / "bad.csv"
    bad.write_text("30, red, yes\n")
    with pytest.raises(data.MalformedRow):
        data.load_csv(bad, schema)
    bad.write_text("30, purple, yes, 1\n")
    with pytest.raises(data.UnknownLevel):
        data.load_csv(bad, schema)
    bad.write_text("x, red, yes, 1\n")
    with pytest.raises(data.MalformedRow):
        data.load_csv(bad, schema)
    bad.write_text("30, red, maybe, 1\n")
    with pytest.raises(data.MalformedRow):
        data.load_csv(bad, schema)
    bad.write_text("")
    with pytest.raises(data.MalformedRow):
        data.load_csv(bad, schema)


def test_dataset_columns_are_read_only(toy):
    schema, path = toy
    d = data.load_csv(path, schema)
    with pytest.raises(ValueError):
        d.columns["age"][0] = 1.0


def test_encode_drops_alphabetically_first_level(toy):
    schema, path = toy
    d = data.load_csv(path, schema)
    dm = data.encode(d)
    assert [c.key for c in dm.columns] == ["(intercept)", "age", "color=green", "color=red", "size"]
    np.testing.assert_array_equal(dm.values[:, 0], 1.0)
    np.testing.assert_array_equal(dm.values[:, 2], [0, 0, 1])
    np.testing.assert_array_equal(dm.values[:, 3], [1, 0, 0])
    full = data.encode(d, drop_policy="none", intercept=False)
    assert [c.key for c in full.columns] == ["age", "color=blue", "color=green", "color=red", "size"]
    np.testing.assert_array_equal(full.values[:, 1:4].sum(axis=1), 1.0)


def test_select_and_unknown_labels(toy):
    schema, path = toy
    d = data.load_csv(path, schema)
    assert data.select(["size", "age"], d).labels == ("age", "size")
    with pytest.raises(data.UnknownLabel):
        data.select(["nope"], d)


def test_design_drop_and_digest(toy):
    schema, path = toy
    dm = data.encode(data.load_csv(path, schema))
    dropped = dm.drop([Column("color", "red")])
    assert Column("color", "red") not in dropped.columns and dropped.p == dm.p - 1
    assert dm.digest() == data.encode(data.load_csv(path, schema)).digest()
    assert dm.digest() != dropped.digest()


def test_column_labels_qualify_collisions():
    cols = (Column("a", "x"), Column("b", "x"), Column("b", "y"), Column("n"))
    assert data.column_labels(cols) == ["a=x", "b=x", "y", "n"]


# --- Adult ------------------------------------------------------------------------

def test_adult_shapes(adult_train, adult_test):
    assert adult_train.row_count == 30162
    assert adult_test.row_count == 15060
    full = data.PROFILES["full"]
    dm = data.design_for(adult_train, full.unprotected, intercept=full.intercept)
    assert dm.p == 87
    assert adult_test.target.mean() == pytest.approx(1 - 0.7543, abs=1e-3)


def test_adult_test_and_train_encode_identically(adult_train, adult_test):
    a = data.encode(adult_train)
    b = data.encode(adult_test)
    assert a.columns == b.columns


def test_recode_marital(adult_train):
    d = data.recode_marital(adult_train)
    f = d.schema.feature("marital-status")
    assert f.levels == ("Married", "Unmarried")
    old = adult_train.values("marital-status")
    new = d.values("marital-status")
    assert set(new[np.char.startswith(old.astype(str), "Married-")]) == {"Married"}
    assert set(new[~np.char.startswith(old.astype(str), "Married-")]) == {"Unmarried"}
    # idempotent
    assert data.recode_marital(d).values("marital-status").tolist() == new.tolist()
    assert [c.key for c in data.encoded_columns(data.select_schema(d.schema, ["marital-status"]), intercept=False)] \
        == ["marital-status=Unmarried"]


def test_subsample_profile(adult_train):
    prof = data.PROFILES["subsample"]
    d = prof.apply(adult_train)
    dm = data.design_for(d, prof.features, intercept=True)
    assert dm.n == 1024
    assert dm.p == 9  # intercept + 8 encoded columns


# --- partitions -------------------------------------------------------------------

def test_partition_invariants():
    with pytest.raises(data.DataError):
        FeaturePartition(frozenset({"a"}), frozenset({"a"}))
    with pytest.raises(data.DataError):
        FeaturePartition(frozenset({"a"}), frozenset({"b"}), frozenset({"a"}))
    p = FeaturePartition(frozenset({"a"}), frozenset({"b"}))
    p.validate(["a", "b"])
    with pytest.raises(data.DataError):
        p.validate(["a", "b", "c"])


def test_partition_remove_moves_exhausted_feature_to_protected(toy):
    schema, _ = toy
    p = FeaturePartition(frozenset({"age"}), frozenset({"color", "size"}))
    p1 = p.remove([Column("color", "green")], schema)
    assert p1.removed == {Column("color", "green")} and "color" in p1.unprotected
    p2 = p1.remove([Column("color", "red")], schema)
    assert "color" in p2.protected and "color" not in p2.unprotected
    assert not p2.removed
    p3 = p2.remove([Column("size")], schema)
    assert p3.unprotected == frozenset() and p3.protected == {"color", "size"}


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from([Column("color", "green"), Column("color", "red"), Column("size")]), max_size=4))
def test_partition_remove_keeps_disjointness(cols):
    schema = data.parse_schema(TOY_SCHEMA)
    p = FeaturePartition(frozenset({"age"}), frozenset({"color", "size"}))
    for c in cols:
        p = p.remove([c], schema)
        p.validate(schema.labels)
        assert not (p.unprotected & p.protected)
        assert all(c.feature in p.unprotected for c in p.removed)
