"""Manifest-driven loading of E-Nose measurement files and synthetic datasets.

A manifest is a JSON document describing one dataset::

    {
      "name": "wines",
      "class_names": ["HQ", "AQ", "LQ"],
      "column_names": ["rh", "temp", "s1", "s2", "s3", "s4", "s5", "s6"],
      "sensor_columns": ["s1", "s2", "s3", "s4", "s5", "s6"],
      "ignored_columns": ["rh", "temp"],
      "sampling_rate_hz": 18.5,
      "injection_start_index": 0,
      "file_pattern": "**/*.txt",
      "label_rule": {"by": "path", "patterns": {"*HQ*": "HQ", "*AQ*": "AQ", "*LQ*": "LQ"}},
      "expected_rows": 3330,
      "delimiter": null
    }

``label_rule`` takes one of two forms:

* ``{"by": "path", "patterns": {glob: class_name, ...}}`` -- the first glob
  (in document order) matching the file path relative to the root labels the
  whole file as one measurement.
* ``{"by": "column", "column": name, "group_column": name | null,
  "values": {raw: class_name, ...}}`` -- each file holds several measurements.
  Rows are grouped by ``group_column`` (or, without one, by consecutive runs of
  the label value) and each group becomes a measurement. Raw label values are
  mapped through ``values``; without a mapping they must be a class name or a
  class index.

Column names come from ``column_names`` when given (positional), otherwise
from the file's header line, otherwise they are ``"0"``, ``"1"``, ...
"""

from __future__ import annotations

import fnmatch
import json
import math
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import (
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
from .rng import SplitMix64

MIN_ROWS = 10
_DELIMITERS = {"comma": ",", "semicolon": ";", "tab": "\t", "whitespace": None}


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    class_names: tuple[str, ...]
    sensor_columns: tuple[str, ...]
    sampling_rate_hz: float
    file_pattern: str
    label_rule: dict
    ignored_columns: tuple[str, ...] = ()
    injection_start_index: int = 0
    expected_rows: int | None = None
    column_names: tuple[str, ...] | None = None
    delimiter: str | None = None
    base_dir: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.class_names:
            raise MissingField("class_names")
        _check_distinct(self.class_names, "class_names")
        if not self.sensor_columns:
            raise MissingField("sensor_columns")
        _check_distinct(self.sensor_columns, "sensor_columns")
        _check_distinct(self.ignored_columns, "ignored_columns")
        for col in self.sensor_columns:
            if col in self.ignored_columns:
                raise DuplicateColumn(col, "listed in both sensor_columns and ignored_columns")
        if self.column_names is not None:
            _check_distinct(self.column_names, "column_names")
        if not self.sampling_rate_hz > 0:
            raise InvalidParameter(f"sampling_rate_hz must be > 0, got {self.sampling_rate_hz}")
        if self.injection_start_index < 0:
            raise InvalidParameter("injection_start_index must be >= 0")
        if self.expected_rows is not None and self.expected_rows < 1:
            raise InvalidParameter("expected_rows must be a positive integer")
        if self.delimiter is not None and self.delimiter not in _DELIMITERS and len(self.delimiter) != 1:
            raise InvalidParameter(f"unsupported delimiter {self.delimiter!r}")
        _check_label_rule(self.label_rule, self.class_names)

    def class_index(self, name: str) -> int:
        return self.class_names.index(name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "class_names": list(self.class_names),
            "sensor_columns": list(self.sensor_columns),
            "ignored_columns": list(self.ignored_columns),
            "sampling_rate_hz": self.sampling_rate_hz,
            "injection_start_index": self.injection_start_index,
            "file_pattern": self.file_pattern,
            "label_rule": self.label_rule,
            "expected_rows": self.expected_rows,
            "column_names": list(self.column_names) if self.column_names is not None else None,
            "delimiter": self.delimiter,
        }


def _check_distinct(items, key):
    seen = set()
    for item in items:
        if item in seen:
            raise DuplicateColumn(item, f"repeated in {key}")
        seen.add(item)


def _check_label_rule(rule, class_names):
    if not isinstance(rule, dict) or not rule:
        raise MissingField("label_rule")
    by = rule.get("by")
    if by == "path":
        patterns = rule.get("patterns")
        if not patterns:
            raise MissingField("label_rule.patterns")
        for pat, cls in patterns.items():
            if cls not in class_names:
                raise UnknownClassInLabelRule(pat, cls)
    elif by == "column":
        if not rule.get("column"):
            raise MissingField("label_rule.column")
        for raw, cls in (rule.get("values") or {}).items():
            if cls not in class_names:
                raise UnknownClassInLabelRule(raw, cls)
    else:
        raise ManifestError(f"label_rule.by must be 'path' or 'column', got {by!r}")


@dataclass(frozen=True)
class Measurement:
    values: np.ndarray
    label: int
    source_id: str
    sampling_rate_hz: float

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def sensors(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Dataset:
    manifest: DatasetManifest
    measurements: tuple[Measurement, ...]

    @property
    def labels(self) -> np.ndarray:
        return np.array([m.label for m in self.measurements], dtype=np.int64)

    def validate(self) -> "Dataset":
        """Check the dataset invariants; returns ``self`` for chaining."""
        n_classes = len(self.manifest.class_names)
        n_sensors = len(self.manifest.sensor_columns)
        for m in self.measurements:
            if not 0 <= m.label < n_classes:
                raise InvalidDataset(f"{m.source_id}: label {m.label} out of range")
            if m.values.ndim != 2 or m.sensors != n_sensors:
                raise InvalidDataset(f"{m.source_id}: expected {n_sensors} sensor columns, got shape {m.values.shape}")
            if m.rows < MIN_ROWS:
                raise InvalidDataset(f"{m.source_id}: {m.rows} rows after injection start, need >= {MIN_ROWS}")
            if not np.all(np.isfinite(m.values)):
                raise InvalidDataset(f"{m.source_id}: non-finite values")
        counts = Counter(m.label for m in self.measurements)
        if len(counts) < 2:
            raise InvalidDataset(f"need at least 2 classes present, found {len(counts)}")
        short = {self.manifest.class_names[c]: k for c, k in counts.items() if k < 2}
        if short:
            raise TooFewSamplesPerClass(f"classes with fewer than 2 measurements: {short}")
        return self


def _manifest_from_dict(doc: dict, base_dir: Path | None = None) -> DatasetManifest:
    def need(key):
        value = doc.get(key)
        if value is None or (isinstance(value, (list, str, dict)) and len(value) == 0):
            raise MissingField(key)
        return value

    column_names = doc.get("column_names")
    try:
        return DatasetManifest(
            name=str(need("name")),
            class_names=tuple(need("class_names")),
            sensor_columns=tuple(need("sensor_columns")),
            ignored_columns=tuple(doc.get("ignored_columns") or ()),
            sampling_rate_hz=float(need("sampling_rate_hz")),
            injection_start_index=int(doc.get("injection_start_index") or 0),
            file_pattern=str(need("file_pattern")),
            label_rule=need("label_rule"),
            expected_rows=None if doc.get("expected_rows") is None else int(doc["expected_rows"]),
            column_names=tuple(column_names) if column_names else None,
            delimiter=doc.get("delimiter"),
            base_dir=base_dir,
        )
    except TypeError as exc:
        raise ManifestError(str(exc)) from exc


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise FileUnreadable(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    return _manifest_from_dict(doc, base_dir=path.resolve().parent)


# --- delimited text parsing -------------------------------------------------

def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def _split(line: str, delim: str | None) -> list[str]:
    if delim is None:
        return line.split()
    return [tok.strip() for tok in line.split(delim)]


def _detect_delimiter(line: str) -> str | None:
    for delim in (",", ";", "\t"):
        if delim in line:
            return delim
    return None


def read_table(path: Path, delimiter: str | None = None) -> tuple[list[str] | None, list[list[str]]]:
    """Split a delimited text file into an optional header and token rows."""
    try:
        text = path.read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FileUnreadable(f"{path} is empty")
    if delimiter in _DELIMITERS:
        delim = _DELIMITERS[delimiter]
    elif delimiter is not None:
        delim = delimiter
    else:
        # the header may carry different separators than the data
        delim = _detect_delimiter(lines[1] if len(lines) > 1 else lines[0])
    first = _split(lines[0], delim)
    header = None
    if not all(_is_number(tok) for tok in first if tok):
        header = first
        lines = lines[1:]
    return header, [_split(ln, delim) for ln in lines]


def _resolve_columns(manifest: DatasetManifest, header, width: int, path) -> list[str]:
    if manifest.column_names is not None:
        names = list(manifest.column_names)
    elif header is not None:
        names = header
    else:
        names = [str(i) for i in range(width)]
    if len(names) != width:
        raise RowCountMismatch(f"{path}: {width} columns in data but {len(names)} column names")
    return names


def _parse_file(manifest: DatasetManifest, root: Path, path: Path) -> list[Measurement]:
    header, rows = read_table(path, manifest.delimiter)
    if not rows:
        raise FileUnreadable(f"{path} has no data rows")
    width = len(rows[0])
    names = _resolve_columns(manifest, header, width, path)
    index = {name: i for i, name in enumerate(names)}
    missing = [c for c in manifest.sensor_columns if c not in index]
    if missing:
        raise ManifestError(f"{path}: sensor columns {missing} not found among {names}")
    sensor_idx = [index[c] for c in manifest.sensor_columns]
    rel = path.relative_to(root).as_posix()
    offset = 1 if header is not None else 0

    def numeric(r, c):
        tok = rows[r][c] if c < len(rows[r]) else ""
        try:
            return float(tok)
        except ValueError:
            raise NonNumericCell(str(path), r + 1 + offset, c + 1, tok) from None

    def cut(values: np.ndarray, source_id: str) -> np.ndarray:
        values = values[manifest.injection_start_index:]
        if manifest.expected_rows is not None and values.shape[0] != manifest.expected_rows:
            raise RowCountMismatch(
                f"{source_id}: {values.shape[0]} rows after injection start, expected {manifest.expected_rows}")
        if not np.all(np.isfinite(values)):
            raise InvalidDataset(f"{source_id}: non-finite values")
        return values

    rule = manifest.label_rule
    if rule["by"] == "path":
        label = None
        for pattern, cls in rule["patterns"].items():
            if fnmatch.fnmatchcase(rel, pattern):
                label = manifest.class_index(cls)
                break
        if label is None:
            raise InvalidDataset(f"{rel}: no label_rule pattern matches this file")
        values = np.array([[numeric(r, c) for c in sensor_idx] for r in range(len(rows))])
        return [Measurement(cut(values, rel), label, rel, manifest.sampling_rate_hz)]

    label_col = rule["column"]
    if label_col not in index:
        raise ManifestError(f"{path}: label column {label_col!r} not found")
    group_col = rule.get("group_column")
    if group_col and group_col not in index:
        raise ManifestError(f"{path}: group column {group_col!r} not found")
    mapping = rule.get("values") or {}
    groups: dict[str, list[int]] = {}
    group_label: dict[str, str] = {}
    prev = None
    run = 0
    for r, row in enumerate(rows):
        raw = row[index[label_col]]
        if group_col:
            key = row[index[group_col]]
        else:
            if raw != prev:
                run += 1
                prev = raw
            key = f"run{run:04d}"
        groups.setdefault(key, []).append(r)
        if group_label.setdefault(key, raw) != raw:
            raise InvalidDataset(f"{rel}: group {key!r} mixes labels {group_label[key]!r} and {raw!r}")
    out = []
    for key, members in groups.items():
        raw = group_label[key]
        cls = mapping.get(raw, raw)
        if cls in manifest.class_names:
            label = manifest.class_index(cls)
        elif re.fullmatch(r"-?\d+(\.0+)?", cls) and 0 <= int(float(cls)) < len(manifest.class_names):
            label = int(float(cls))
        else:
            raise InvalidDataset(f"{rel}: label value {raw!r} matches no class")
        values = np.array([[numeric(r, c) for c in sensor_idx] for r in members])
        sid = f"{rel}#{key}"
        out.append(Measurement(cut(values, sid), label, sid, manifest.sampling_rate_hz))
    return out


def load_dataset(manifest: DatasetManifest, root: str | Path | None = None, jobs: int = 1) -> Dataset:
    """Load every file matching the manifest's pattern under ``root``.

    ``root`` defaults to the manifest's directory. Files are read in sorted
    path order, so measurement order does not depend on ``jobs``.
    """
    if root is None:
        root = manifest.base_dir if manifest.base_dir is not None else Path(".")
    root = Path(root).resolve()
    paths = sorted(p for p in root.glob(manifest.file_pattern) if p.is_file() and p.suffix != ".json")
    if not paths:
        raise NoMatchingFiles(manifest.file_pattern, str(root))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda p: _parse_file(manifest, root, p), paths))
    else:
        parts = [_parse_file(manifest, root, p) for p in paths]
    measurements = tuple(m for part in parts for m in part)
    return Dataset(manifest, measurements).validate()


# --- synthetic data ---------------------------------------------------------

def generate_synthetic(classes: int, per_class: int, rows: int, sensors: int,
                       separation: float, seed: int, noise: float = 1.0) -> Dataset:
    """Desk-scale stand-in for a real E-Nose database.

    Each sensor follows a rising saturation curve ``a * (1 - exp(-t / tau))``
    with ``tau = rows / 5``. The amplitude of class ``c`` on sensor ``s`` is
    ``1 + separation * c / (classes - 1) * w_s`` where ``w_s`` in ``[0.5, 1)``
    is a per-sensor weight, so ``separation = 0`` makes all classes share one
    template. Each measurement adds a small gain jitter and white Gaussian
    noise of standard deviation ``noise``.
    """
    if classes < 2 or per_class < 2 or rows < MIN_ROWS or sensors < 1 or not separation >= 0 or noise < 0:
        raise InvalidParameter(
            f"invalid synthetic parameters: classes={classes}, per_class={per_class}, "
            f"rows={rows}, sensors={sensors}, separation={separation}, noise={noise}")
    rng = SplitMix64(seed)
    sensor_weight = rng.uniform(sensors, 0.5, 1.0)
    tau = rows / 5.0
    curve = np.array([1.0 - math.exp(-t / tau) for t in range(rows)])
    names = tuple(f"class{c}" for c in range(classes))
    manifest = DatasetManifest(
        name=f"synthetic-{classes}x{per_class}-sep{separation:g}-seed{seed}",
        class_names=names,
        sensor_columns=tuple(f"s{j}" for j in range(sensors)),
        sampling_rate_hz=1.0,
        file_pattern="**/*.csv",
        label_rule={"by": "path", "patterns": {f"{n}/*": n for n in names}},
    )
    measurements = []
    for c in range(classes):
        amplitude = 1.0 + separation * (c / (classes - 1)) * sensor_weight
        for i in range(per_class):
            gain = 1.0 + 0.05 * rng.normal(sensors)
            values = curve[:, None] * (amplitude * gain)[None, :] + noise * rng.normal((rows, sensors))
            measurements.append(Measurement(values, c, f"{names[c]}/m{i:03d}", 1.0))
    return Dataset(manifest, tuple(measurements)).validate()


def write_dataset(ds: Dataset, directory: str | Path) -> Path:
    """Write ``ds`` as manifest.json plus one CSV per measurement.

    Values are written with 9 significant digits. Only datasets whose
    ``source_id`` values are relative paths matching the manifest's path rule
    (as produced by :func:`generate_synthetic`) round-trip exactly.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = ",".join(ds.manifest.sensor_columns)
    for m in ds.measurements:
        rel = m.source_id if m.source_id.endswith(".csv") else m.source_id + ".csv"
        target = directory / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        body = "\n".join(",".join(f"{v:.9g}" for v in row) for row in m.values.tolist())
        target.write_text(header + "\n" + body + "\n")
    doc = ds.manifest.to_dict()
    doc["injection_start_index"] = 0
    doc["column_names"] = None
    path = directory / "manifest.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


# --- summaries --------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSummary:
    name: str
    class_names: tuple[str, ...]
    counts: tuple[int, ...]
    rows_min: int
    rows_max: int
    sensors: int
    sampling_rate_hz: float

    @property
    def classes(self) -> int:
        return len(self.class_names)

    @property
    def measurements(self) -> int:
        return sum(self.counts)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "classes": self.classes,
            "class_names": list(self.class_names),
            "counts": list(self.counts),
            "measurements": self.measurements,
            "rows_min": self.rows_min,
            "rows_max": self.rows_max,
            "sensors": self.sensors,
            "sampling_rate_hz": self.sampling_rate_hz,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_text(self) -> str:
        rows = str(self.rows_min) if self.rows_min == self.rows_max else f"{self.rows_min}-{self.rows_max}"
        lines = [
            f"dataset        {self.name}",
            f"measurements   {self.measurements}",
            f"rows (T)       {rows}",
            f"sensors (S)    {self.sensors}",
            f"sampling rate  {self.sampling_rate_hz:g} Hz",
            "",
        ]
        width = max(len("class"), *(len(c) for c in self.class_names))
        lines.append(f"{'class':<{width}}  count")
        lines += [f"{name:<{width}}  {count:>5d}" for name, count in zip(self.class_names, self.counts)]
        return "\n".join(lines)


def dataset_summary(ds: Dataset) -> DatasetSummary:
    if not ds.measurements:
        raise InvalidDataset("dataset has no measurements")
    counts = Counter(m.label for m in ds.measurements)
    rows = [m.rows for m in ds.measurements]
    return DatasetSummary(
        name=ds.manifest.name,
        class_names=ds.manifest.class_names,
        counts=tuple(counts.get(c, 0) for c in range(len(ds.manifest.class_names))),
        rows_min=min(rows),
        rows_max=max(rows),
        sensors=len(ds.manifest.sensor_columns),
        sampling_rate_hz=ds.manifest.sampling_rate_hz,
    )
