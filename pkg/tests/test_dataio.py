import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sniffbench.dataio import (
    Dataset,
    DatasetManifest,
    Measurement,
    dataset_summary,
    generate_synthetic,
    load_dataset,
    load_manifest,
    read_table,
    write_dataset,
)
from sniffbench.errors import (
    DuplicateColumn,
    FileUnreadable,
    InvalidDataset,
    InvalidParameter,
    ManifestError,
    MissingField,
    NoMatchingFiles,
    NonNumericCell,
    RowCountMismatch,
    TooFewSamplesPerClass,
    UnknownClassInLabelRule,
)

WINE_SENSORS = ["R1", "R2", "R3", "R4", "R5", "R6"]


def wine_doc(**changes):
    doc = {
        "name": "wines",
        "class_names": ["HQ", "AQ", "LQ"],
        "sensor_columns": WINE_SENSORS,
        "ignored_columns": ["RH", "temp"],
        "sampling_rate_hz": 18.5,
        "injection_start_index": 0,
        "file_pattern": "**/*.txt",
        "label_rule": {"by": "path", "patterns": {"HQ_*": "HQ", "AQ_*": "AQ", "LQ_*": "LQ"}},
    }
    doc.update(changes)
    return doc


def write_manifest(tmp_path, doc):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


def write_rows(path, rows, header=None, delim=","):
    lines = [delim.join(header)] if header else []
    lines += [delim.join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


# --- manifests ----------------------------------------------------------------

def test_wine_manifest_is_valid(tmp_path):
    m = load_manifest(write_manifest(tmp_path, wine_doc()))
    assert m.class_names == ("HQ", "AQ", "LQ")
    assert len(m.sensor_columns) == 6
    assert m.ignored_columns == ("RH", "temp")
    assert m.base_dir == tmp_path.resolve()


def test_empty_class_list_is_missing_field(tmp_path):
    with pytest.raises(MissingField) as err:
        load_manifest(write_manifest(tmp_path, wine_doc(class_names=[])))
    assert "class_names" in str(err.value)


def test_column_in_sensors_and_ignored(tmp_path):
    with pytest.raises(DuplicateColumn) as err:
        load_manifest(write_manifest(tmp_path, wine_doc(ignored_columns=["RH", "R3"])))
    assert "R3" in str(err.value)


def test_repeated_sensor_column(tmp_path):
    with pytest.raises(DuplicateColumn) as err:
        load_manifest(write_manifest(tmp_path, wine_doc(sensor_columns=["R1", "R2", "R1"])))
    assert "R1" in str(err.value)


def test_label_rule_with_unknown_class(tmp_path):
    rule = {"by": "path", "patterns": {"HQ_*": "HQ", "XX_*": "premium"}}
    with pytest.raises(UnknownClassInLabelRule) as err:
        load_manifest(write_manifest(tmp_path, wine_doc(label_rule=rule)))
    assert "XX_*" in str(err.value) and "premium" in str(err.value)


@pytest.mark.parametrize("key", ["name", "sensor_columns", "sampling_rate_hz", "file_pattern", "label_rule"])
def test_missing_required_keys(tmp_path, key):
    doc = wine_doc()
    del doc[key]
    with pytest.raises(MissingField) as err:
        load_manifest(write_manifest(tmp_path, doc))
    assert key in str(err.value)


def test_nonpositive_sampling_rate(tmp_path):
    with pytest.raises(InvalidParameter):
        load_manifest(write_manifest(tmp_path, wine_doc(sampling_rate_hz=-1)))


def test_unreadable_and_malformed_manifest(tmp_path):
    with pytest.raises(FileUnreadable):
        load_manifest(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ManifestError):
        load_manifest(bad)


# --- loading ----------------------------------------------------------------------

def make_wine_like(tmp_path, per_class=2, rows=12, header=True, delim=","):
    rng = np.random.default_rng(0)
    cols = ["RH", "temp"] + WINE_SENSORS
    truth = {}
    for cls in ("HQ", "AQ", "LQ"):
        for i in range(per_class):
            values = rng.normal(size=(rows, len(cols))).round(6)
            write_rows(tmp_path / f"{cls}_{i}.txt", values.tolist(), cols if header else None, delim)
            truth[f"{cls}_{i}.txt"] = values[:, 2:]
    return truth


def test_load_dataset_reorders_and_labels(tmp_path):
    truth = make_wine_like(tmp_path)
    doc = wine_doc(sensor_columns=list(reversed(WINE_SENSORS)))
    ds = load_dataset(load_manifest(write_manifest(tmp_path, doc)))
    assert len(ds.measurements) == 6
    for m in ds.measurements:
        np.testing.assert_array_equal(m.values, truth[m.source_id][:, ::-1])
        assert ds.manifest.class_names[m.label] == m.source_id[:2]
        assert m.sampling_rate_hz == 18.5


@pytest.mark.parametrize("delim", [";", "\t", " "])
def test_delimiter_autodetect(tmp_path, delim):
    truth = make_wine_like(tmp_path, delim=delim)
    ds = load_dataset(load_manifest(write_manifest(tmp_path, wine_doc())))
    for m in ds.measurements:
        np.testing.assert_array_equal(m.values, truth[m.source_id])


def test_positional_columns_without_header(tmp_path):
    truth = make_wine_like(tmp_path, header=False)
    doc = wine_doc(column_names=["RH", "temp"] + WINE_SENSORS)
    ds = load_dataset(load_manifest(write_manifest(tmp_path, doc)))
    for m in ds.measurements:
        np.testing.assert_array_equal(m.values, truth[m.source_id])


def test_injection_start_drops_rows(tmp_path):
    truth = make_wine_like(tmp_path, rows=15)
    ds = load_dataset(load_manifest(write_manifest(tmp_path, wine_doc(injection_start_index=3))))
    for m in ds.measurements:
        assert m.rows == 12
        np.testing.assert_array_equal(m.values, truth[m.source_id][3:])


def test_expected_rows_mismatch(tmp_path):
    make_wine_like(tmp_path, rows=12)
    with pytest.raises(RowCountMismatch):
        load_dataset(load_manifest(write_manifest(tmp_path, wine_doc(expected_rows=11))))


def test_non_numeric_cell_reports_position(tmp_path):
    make_wine_like(tmp_path)
    path = tmp_path / "AQ_1.txt"
    lines = path.read_text().splitlines()
    cells = lines[4].split(",")
    cells[5] = "abc"
    lines[4] = ",".join(cells)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(NonNumericCell) as err:
        load_dataset(load_manifest(write_manifest(tmp_path, wine_doc())))
    msg = str(err.value)
    assert "abc" in msg and "AQ_1.txt" in msg
    assert err.value.row == 5 and err.value.col == 6


def test_no_matching_files_names_glob(tmp_path):
    with pytest.raises(NoMatchingFiles) as err:
        load_dataset(load_manifest(write_manifest(tmp_path, wine_doc())))
    assert "**/*.txt" in str(err.value)


def test_too_few_per_class(tmp_path):
    make_wine_like(tmp_path, per_class=1)
    with pytest.raises(TooFewSamplesPerClass):
        load_dataset(load_manifest(write_manifest(tmp_path, wine_doc())))


def test_nan_values_rejected(tmp_path):
    make_wine_like(tmp_path)
    path = tmp_path / "HQ_0.txt"
    lines = path.read_text().splitlines()
    lines[2] = ",".join(["nan"] * 8)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(InvalidDataset):
        load_dataset(load_manifest(write_manifest(tmp_path, wine_doc())))


def test_column_labelled_records(tmp_path):
    rows = []
    rng = np.random.default_rng(1)
    for rec, cls in enumerate(["1", "1", "2", "2"]):
        for _ in range(10):
            rows.append([rec, cls] + rng.normal(size=2).round(4).tolist())
    write_rows(tmp_path / "all.csv", rows, ["rec", "y", "a", "b"])
    doc = {
        "name": "col", "class_names": ["ethanol", "water"], "sensor_columns": ["a", "b"],
        "sampling_rate_hz": 1, "file_pattern": "*.csv",
        "label_rule": {"by": "column", "column": "y", "group_column": "rec",
                       "values": {"1": "ethanol", "2": "water"}},
    }
    ds = load_dataset(load_manifest(write_manifest(tmp_path, doc)))
    assert [m.label for m in ds.measurements] == [0, 0, 1, 1]
    assert all(m.rows == 10 for m in ds.measurements)
    np.testing.assert_array_equal(ds.measurements[2].values, np.array([r[2:] for r in rows[20:30]], dtype=float))


def test_parallel_loading_matches_serial(tmp_path):
    make_wine_like(tmp_path, per_class=3)
    manifest = load_manifest(write_manifest(tmp_path, wine_doc()))
    a, b = load_dataset(manifest), load_dataset(manifest, jobs=4)
    assert [m.source_id for m in a.measurements] == [m.source_id for m in b.measurements]
    for x, y in zip(a.measurements, b.measurements):
        np.testing.assert_array_equal(x.values, y.values)


def test_read_table_detects_header(tmp_path):
    p = tmp_path / "t.csv"
    write_rows(p, [[1, 2], [3, 4]], ["x", "y"])
    assert read_table(p) == (["x", "y"], [["1", "2"], ["3", "4"]])
    write_rows(p, [[1, 2], [3, 4]])
    assert read_table(p) == (None, [["1", "2"], ["3", "4"]])


# --- synthetic data ------------------------------------------------------------------

def test_synthetic_shape_and_determinism():
    a = generate_synthetic(3, 10, 100, 6, 5.0, 42)
    b = generate_synthetic(3, 10, 100, 6, 5.0, 42)
    assert len(a.measurements) == 30
    assert {m.values.shape for m in a.measurements} == {(100, 6)}
    assert sorted(set(a.labels.tolist())) == [0, 1, 2]
    assert b"".join(m.values.tobytes() for m in a.measurements) == \
        b"".join(m.values.tobytes() for m in b.measurements)
    c = generate_synthetic(3, 10, 100, 6, 5.0, 43)
    assert not np.array_equal(a.measurements[0].values, c.measurements[0].values)


def test_synthetic_zero_separation_shares_one_template():
    ds = generate_synthetic(2, 5, 50, 4, 0.0, 7, noise=0.0)
    # only the small per-measurement gain jitter separates the curves
    means = [np.mean([m.values for m in ds.measurements if m.label == c], axis=0) for c in (0, 1)]
    assert np.max(np.abs(means[0] - means[1])) < 0.15
    ds = generate_synthetic(2, 5, 50, 4, 0.0, 7)
    assert len(ds.measurements) == 10


@pytest.mark.parametrize("args", [
    (1, 10, 100, 6, 1.0), (3, 1, 100, 6, 1.0), (3, 10, 9, 6, 1.0), (3, 10, 100, 0, 1.0), (3, 10, 100, 6, -1.0),
])
def test_synthetic_bounds(args):
    with pytest.raises(InvalidParameter):
        generate_synthetic(*args, seed=0)


@given(st.integers(2, 4), st.integers(2, 4), st.integers(10, 30), st.integers(1, 4),
       st.floats(0, 10), st.integers(0, 2 ** 64 - 1))
@settings(max_examples=25, deadline=None)
def test_write_then_load_round_trip(tmp_path_factory, classes, per_class, rows, sensors, sep, seed):
    ds = generate_synthetic(classes, per_class, rows, sensors, sep, seed)
    out = tmp_path_factory.mktemp("rt")
    back = load_dataset(load_manifest(write_dataset(ds, out)))
    assert len(back.measurements) == len(ds.measurements)
    by_id = {m.source_id: m for m in back.measurements}
    for m in ds.measurements:
        other = by_id[m.source_id + ".csv"]
        assert other.label == m.label
        assert np.max(np.abs(other.values - m.values)) < 1e-7
        assert np.all(np.isfinite(other.values))


# --- summaries ----------------------------------------------------------------------

def test_summary_of_synthetic():
    s = dataset_summary(generate_synthetic(3, 10, 100, 6, 5.0, 42))
    assert s.classes == 3
    assert s.counts == (10, 10, 10)
    assert (s.rows_min, s.rows_max, s.sensors) == (100, 100, 6)
    assert sum(s.counts) == s.measurements == 30
    doc = json.loads(s.to_json())
    assert doc["counts"] == [10, 10, 10]
    text = s.to_text()
    assert "class2" in text and "100" in text


def test_summary_of_empty_dataset():
    m = DatasetManifest("e", ("a", "b"), ("s",), 1.0, "*", {"by": "path", "patterns": {"*": "a"}})
    with pytest.raises(InvalidDataset):
        dataset_summary(Dataset(m, ()))


def test_dataset_validate_rejects_short_and_mislabelled():
    m = DatasetManifest("e", ("a", "b"), ("s",), 1.0, "*", {"by": "path", "patterns": {"*": "a"}})
    ok = [Measurement(np.zeros((10, 1)), c, f"{c}{i}", 1.0) for c in (0, 1) for i in range(2)]
    Dataset(m, tuple(ok)).validate()
    with pytest.raises(InvalidDataset):
        Dataset(m, tuple(ok + [Measurement(np.zeros((9, 1)), 0, "short", 1.0)])).validate()
    with pytest.raises(InvalidDataset):
        Dataset(m, tuple(ok + [Measurement(np.zeros((10, 1)), 2, "bad", 1.0)])).validate()
    with pytest.raises(InvalidDataset):
        Dataset(m, tuple(x for x in ok if x.label == 0)).validate()
