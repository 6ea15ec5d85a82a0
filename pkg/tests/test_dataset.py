import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from codmtl.dataset import (CategoryEncoder, Cohort, Column, FeatureSchema, RawTable, encode,
                            impute_zero, kfold_split, load_cohort, load_table, write_table)
from codmtl.errors import DataError, SchemaError

SCHEMA = FeatureSchema((Column("age", "numerical", "recipient"), Column("blood_type", "categorical", "donor")))


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_three_rows(tmp_path):
    p = _write(tmp_path, "age,blood_type\n40,A\n,B\n61.5,A\n")
    raw = load_table(p, SCHEMA)
    assert len(raw) == 3
    assert raw.column("age") == ["40", None, "61.5"]


def test_header_mismatch_names_column(tmp_path):
    p = _write(tmp_path, "age,blood\n40,A\n")
    with pytest.raises(SchemaError, match="blood_type"):
        load_table(p, SCHEMA)


def test_arity_mismatch_reports_line(tmp_path):
    p = _write(tmp_path, "age,blood_type\n40,A\n41\n")
    with pytest.raises(DataError, match="line 3"):
        load_table(p, SCHEMA)


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_table(tmp_path / "nope.csv", SCHEMA)


def test_encoder_first_appearance_and_unseen():
    raw = RawTable(["age", "blood_type"], [["1", "A"], ["2", "B"], ["3", "A"]])
    c, enc = encode(raw, SCHEMA)
    assert c.X[:, 1].tolist() == [1, 2, 1]
    c2, _ = encode(RawTable(["age", "blood_type"], [["1", "C"], ["2", None]]), SCHEMA, enc)
    assert c2.X[:, 1].tolist() == [0, 0]
    assert enc.decode("blood_type", 2) == "B"
    assert CategoryEncoder.from_dict(enc.to_dict()).code_maps == enc.code_maps


def test_all_numerical_identity():
    schema = FeatureSchema((Column("a", "numerical"), Column("b", "numerical")))
    c, _ = encode(RawTable(["a", "b"], [["1.5", "-2"], ["0", "3e2"]]), schema)
    np.testing.assert_array_equal(c.X, [[1.5, -2.0], [0.0, 300.0]])


def test_unparseable_number():
    with pytest.raises(DataError):
        encode(RawTable(["age", "blood_type"], [["old", "A"]]), SCHEMA)


def test_impute_zero():
    schema = FeatureSchema((Column("a", "numerical"), Column("b", "numerical")))
    c, _ = encode(RawTable(["a", "b"], [[None, "2.5"], ["1", "2"], [None, None]]), schema)
    c = impute_zero(c)
    np.testing.assert_array_equal(c.X, [[0.0, 2.5], [1.0, 2.0], [0.0, 0.0]])
    assert not c.has_missing()


def test_labels_must_be_binary():
    with pytest.raises(DataError):
        encode(RawTable(["age", "blood_type", "y"], [["1", "A", "2"]]), SCHEMA, label_columns=["y"])


def _cohort(Y):
    Y = np.asarray(Y, dtype=np.int8).reshape(len(Y), -1)
    schema = FeatureSchema((Column("x", "numerical"),))
    return Cohort(np.arange(len(Y), dtype=float)[:, None], Y, schema, [str(i) for i in range(len(Y))],
                  [f"t{j}" for j in range(Y.shape[1])])


def test_kfold_stratified_small():
    c = _cohort([1, 1, 1, 1, 0, 0, 0, 0])
    for f in kfold_split(c, 4, 0):
        assert sorted(c.Y[f.test_rows, 0].tolist()) == [0, 1]


def test_kfold_sizes_disjoint_deterministic():
    rng = np.random.default_rng(0)
    c = _cohort(rng.integers(0, 2, size=(100, 2)))
    folds = kfold_split(c, 4, 9)
    assert [f.test_rows.size for f in folds] == [25] * 4
    allt = np.concatenate([f.test_rows for f in folds])
    assert sorted(allt.tolist()) == list(range(100))
    again = kfold_split(c, 4, 9)
    assert all((a.test_rows == b.test_rows).all() for a, b in zip(folds, again))
    for f in folds:
        assert np.intersect1d(f.train_rows, f.test_rows).size == 0


def test_kfold_bad_k():
    c = _cohort([0, 1, 0])
    with pytest.raises(DataError):
        kfold_split(c, 1, 0)
    with pytest.raises(DataError):
        kfold_split(c, 4, 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=6, max_size=80),
       st.integers(2, 6), st.integers(0, 1000))
def test_kfold_balance_property(labels, k, seed):
    if k > len(labels):
        return
    c = _cohort(labels)
    folds = kfold_split(c, k, seed)
    sizes = [f.test_rows.size for f in folds]
    assert max(sizes) - min(sizes) <= 1
    pattern = c.Y[:, 0] + 2 * c.Y[:, 1]
    for p in range(4):
        counts = [int((pattern[f.test_rows] == p).sum()) for f in folds]
        assert max(counts) - min(counts) <= 1


def test_schema_validation_and_round_trip(tmp_path):
    with pytest.raises(SchemaError):
        Column("a", "text")
    with pytest.raises(SchemaError):
        FeatureSchema((Column("a", "numerical"), Column("a", "numerical")))
    SCHEMA.save(tmp_path / "s.json")
    assert FeatureSchema.load(tmp_path / "s.json") == SCHEMA
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(SchemaError):
        FeatureSchema.load(tmp_path / "bad.json")
    assert SCHEMA.indices(role="donor") == [1]


def test_write_then_load_cohort(tmp_path):
    p = tmp_path / "c.csv"
    write_table(p, ["id", "age", "blood_type", "y"], [["a", 3.5, "O", 1], ["b", None, "A", 0]])
    c, enc = load_cohort(p, SCHEMA, ["y"])
    assert c.ids == ["a", "b"]
    np.testing.assert_array_equal(c.X, [[3.5, 1.0], [0.0, 2.0]])
    assert c.Y[:, 0].tolist() == [1, 0]
