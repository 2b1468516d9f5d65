"""Rising-window experiment orchestration and report emission.

One experiment = one dataset, one stratified holdout split, and every
(method, window) cell trained and scored on that same split. The earliest
window reaching the best test accuracy is reported per method together with
its speedup ratio (full measurement length over window length).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .dataio import Dataset, Measurement, dataset_summary, load_dataset, load_manifest
from .errors import (
    ConfigError,
    EmptyInput,
    InvalidParameter,
    LengthMismatch,
    SchemaVersionError,
    SniffBenchError,
    TooFewSamplesPerClass,
    WindowMismatch,
)
from .neural import Network, TrainConfig, build_network, predict_network, train_network
from .rng import SplitMix64, derive_seed
from .svm import MulticlassSvmModel, SvmConfig, train_multiclass
from .windowing import (
    WINDOWS,
    Normalizer,
    WindowedSample,
    apply_normalizer,
    check_window,
    fit_normalizer,
    flatten_sample,
    parse_window,
    require_equal_lengths,
    slice_rows,
    window_label,
    window_row_count,
)

log = logging.getLogger(__name__)

METHODS = ("svm", "deep_mlp", "sniff_convnet", "sniff_resnet", "sniff_multinose")
FLAT_METHODS = ("svm", "deep_mlp")
REPORT_SCHEMA = "sniffbench.report"
MODEL_SCHEMA = "sniffbench.model"
SCHEMA_VERSION = 1
EVALUATION_NOTE = ("single stratified holdout split shared by all cells; "
                   "the best window is selected by accuracy on the held-out test set")


# --- small pure helpers -------------------------------------------------------

def speedup_ratio(total_rows: int, k: int) -> float:
    """Full measurement length over the length of window ``k``."""
    return total_rows / window_row_count(total_rows, k)


def accuracy(predicted, actual) -> float:
    predicted, actual = np.asarray(predicted), np.asarray(actual)
    if predicted.shape != actual.shape:
        raise LengthMismatch(f"{predicted.shape} predictions vs {actual.shape} labels")
    if predicted.size == 0:
        raise EmptyInput("accuracy of an empty prediction set")
    return float(np.mean(predicted == actual))


def holdout_split(data: Dataset | Sequence[int], test_fraction: float = 0.3,
                  seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/test indices.

    Each class sends ``round(test_fraction * count)`` (half-up, clamped so
    both sides keep at least one sample) of its members to the test side.
    The product is evaluated on the fraction's shortest decimal form, so 0.3
    of 5 is exactly 1.5 and rounds to 2. Returns sorted index arrays.
    """
    labels = data.labels if isinstance(data, Dataset) else np.asarray(data, dtype=np.int64)
    if not 0 < test_fraction < 1:
        raise InvalidParameter(f"test_fraction must lie in (0, 1), got {test_fraction}")
    frac = Fraction(repr(float(test_fraction)))
    rng = SplitMix64(derive_seed(seed, "holdout"))
    train, test = [], []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if len(members) < 2:
            raise TooFewSamplesPerClass(f"class {int(c)} has {len(members)} sample(s); holdout needs >= 2")
        n_test = math.floor(frac * len(members) + Fraction(1, 2))
        n_test = min(max(n_test, 1), len(members) - 1)
        perm = members[rng.permutation(len(members))]
        test.extend(perm[:n_test].tolist())
        train.extend(perm[n_test:].tolist())
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(test), dtype=np.int64)


# --- per-window models ----------------------------------------------------------

@dataclass
class WindowModel:
    """A trained classifier plus everything needed to apply it to raw measurements."""
    method: str
    window: int
    row_count: int
    normalizer: Normalizer
    class_names: tuple[str, ...]
    model: MulticlassSvmModel | Network

    def _inputs(self, samples: list[WindowedSample]) -> np.ndarray:
        normed = [apply_normalizer(self.normalizer, s) for s in samples]
        if self.method in FLAT_METHODS:
            return np.stack([flatten_sample(s) for s in normed])
        return np.stack([s.features for s in normed])

    def predict(self, measurements: Sequence[Measurement]) -> np.ndarray:
        short = [m.source_id for m in measurements if m.rows < self.row_count]
        if short:
            raise WindowMismatch(
                f"model needs {self.row_count} rows ({window_label(self.window)}); too short: {short[:5]}")
        X = self._inputs([slice_rows(m, self.row_count) for m in measurements])
        if self.method == "svm":
            return self.model.predict(X)
        return predict_network(self.model, X)

    def to_dict(self) -> dict:
        return {
            "format": MODEL_SCHEMA,
            "version": SCHEMA_VERSION,
            "method": self.method,
            "window": window_label(self.window),
            "row_count": self.row_count,
            "class_names": list(self.class_names),
            "normalizer": self.normalizer.to_dict(),
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "WindowModel":
        if doc.get("format") != MODEL_SCHEMA or doc.get("version") != SCHEMA_VERSION:
            raise SchemaVersionError(
                f"expected {MODEL_SCHEMA} v{SCHEMA_VERSION}, got {doc.get('format')!r} v{doc.get('version')!r}")
        method = doc["method"]
        model = MulticlassSvmModel.from_dict(doc["model"]) if method == "svm" else Network.from_dict(doc["model"])
        return cls(method, parse_window(doc["window"]), int(doc["row_count"]),
                   Normalizer.from_dict(doc["normalizer"]), tuple(doc["class_names"]), model)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _svm_config(overrides: dict, seed: int) -> SvmConfig:
    opts = dict(overrides.get("svm", {}))
    opts.setdefault("seed", derive_seed(seed, "svm"))
    return SvmConfig(**opts)


def _train_config(method: str, overrides: dict, seed: int, k: int) -> tuple[TrainConfig, dict]:
    opts = dict(overrides.get(method, {}))
    arch = opts.pop("arch", {})
    opts.setdefault("seed", derive_seed(seed, method, "shuffle", k))
    return TrainConfig(**opts), arch


def fit_window_model(measurements: Sequence[Measurement], k: int, method: str, class_names: Sequence[str],
                     seed: int = 0, overrides: dict | None = None,
                     per_column: bool = False) -> tuple[WindowModel, float]:
    """Slice, normalize (fitted on ``measurements`` only) and train one model.

    Returns the model and the wall-clock seconds spent in training alone.
    """
    if method not in METHODS:
        raise InvalidParameter(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    overrides = overrides or {}
    k = check_window(k)
    total = require_equal_lengths(measurements)
    rows = window_row_count(total, k)
    samples = [slice_rows(m, rows) for m in measurements]
    normalizer = fit_normalizer(samples, per_column=per_column)
    normed = [apply_normalizer(normalizer, s) for s in samples]
    labels = np.array([s.label for s in normed])
    if method in FLAT_METHODS:
        X = np.stack([flatten_sample(s) for s in normed])
    else:
        X = np.stack([s.features for s in normed])
    if method == "svm":
        cfg = _svm_config(overrides, seed)
        t0 = time.perf_counter()
        model = train_multiclass(X, labels, cfg)
        elapsed = time.perf_counter() - t0
    else:
        cfg, arch = _train_config(method, overrides, seed, k)
        net = _build(method, rows, samples[0].cols, len(class_names), derive_seed(seed, method, "init", k), arch)
        t0 = time.perf_counter()
        model = train_network(net, X, labels, cfg).network
        elapsed = time.perf_counter() - t0
    return WindowModel(method, k, rows, normalizer, tuple(class_names), model), elapsed


def _build(method, rows, cols, classes, seed, arch):
    from .neural import builders

    if not arch:
        return build_network(method, rows, cols, classes, seed)
    if method == "deep_mlp":
        return builders.build_deep_mlp(rows * cols, classes, seed, **arch)
    return builders.BUILDERS[method](rows, cols, classes, seed, **arch)


# --- results ----------------------------------------------------------------------

@dataclass
class WindowResult:
    window: int
    rows: int
    correct: int = 0
    total: int = 0
    train_seconds: float = 0.0
    fingerprint: str = ""
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def accuracy(self) -> float | None:
        return self.correct / self.total if self.ok and self.total else None

    @property
    def exact_accuracy(self) -> Fraction | None:
        return Fraction(self.correct, self.total) if self.ok and self.total else None


def run_window(ds: Dataset, split: tuple[np.ndarray, np.ndarray], k: int, method: str, seed: int = 0,
               overrides: dict | None = None, per_column: bool = False) -> WindowResult:
    train_idx, test_idx = split
    train = [ds.measurements[i] for i in train_idx]
    test = [ds.measurements[i] for i in test_idx]
    rows = window_row_count(require_equal_lengths(ds.measurements), k)
    try:
        model, seconds = fit_window_model(train, k, method, ds.manifest.class_names, seed, overrides, per_column)
        predicted = model.predict(test)
    except (SniffBenchError, ArithmeticError, ValueError, MemoryError) as exc:
        error = f"{method} {window_label(k)}: {type(exc).__name__}: {exc}"
        log.warning("%s", error)
        return WindowResult(k, rows, error=error)
    actual = np.array([m.label for m in test])
    correct = int(np.sum(predicted == actual))
    log.info("%s %s acc=%d/%d train=%.3fs", method, window_label(k), correct, len(actual), seconds)
    return WindowResult(k, rows, correct, len(actual), seconds, model.fingerprint())


def best_window(results: Sequence[WindowResult]) -> WindowResult | None:
    """Earliest successful window attaining the maximum accuracy."""
    ok = [r for r in results if r.ok]
    if not ok:
        return None
    top = max(r.exact_accuracy for r in ok)
    return min((r for r in ok if r.exact_accuracy == top), key=lambda r: r.window)


@dataclass
class MethodReport:
    method: str
    results: list[WindowResult]
    total_rows: int

    @property
    def best(self) -> WindowResult | None:
        return best_window(self.results)

    @property
    def best_window(self) -> int | None:
        b = self.best
        return b.window if b else None

    @property
    def best_accuracy(self) -> float | None:
        b = self.best
        return b.accuracy if b else None

    @property
    def last(self) -> WindowResult | None:
        for r in self.results:
            if r.window == 10:
                return r
        return None

    @property
    def last_window_accuracy(self) -> float | None:
        last = self.last
        return last.accuracy if last else None

    @property
    def total_train_seconds(self) -> float:
        return sum(r.train_seconds for r in self.results if r.ok)

    @property
    def speedup_ratio(self) -> float | None:
        b = self.best
        return speedup_ratio(self.total_rows, b.window) if b else None

    @property
    def failures(self) -> int:
        return sum(not r.ok for r in self.results)


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    methods: tuple[str, ...] = ("svm",)
    windows: tuple[int, ...] = WINDOWS
    holdout_test_fraction: float = 0.3
    seed: int = 0
    overrides: dict[str, dict] = field(default_factory=dict)
    per_column_normalization: bool = False
    jobs: int = 1

    def __post_init__(self):
        self.methods = tuple(self.methods)
        self.windows = tuple(parse_window(w) for w in self.windows)
        if not self.methods:
            raise ConfigError("at least one method is required")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown method(s) {unknown}; choose from {', '.join(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must be distinct")
        if not self.windows:
            raise ConfigError("at least one window is required")
        if list(self.windows) != sorted(set(self.windows)):
            raise ConfigError("windows must be distinct and sorted ascending")
        if not 0 < self.holdout_test_fraction < 1:
            raise ConfigError("holdout_test_fraction must lie in (0, 1)")
        bad = [k for k in self.overrides if k not in METHODS]
        if bad:
            raise ConfigError(f"overrides for unknown method(s) {bad}")
        for method, opts in self.overrides.items():
            allowed = {f.name for f in fields(SvmConfig if method == "svm" else TrainConfig)}
            if method != "svm":
                allowed.add("arch")
            extra = set(opts) - allowed
            if extra:
                raise ConfigError(f"unknown {method} override(s) {sorted(extra)}")

    def echo(self) -> dict:
        """Settings that influence results (``jobs`` does not)."""
        return {
            "dataset": self.dataset,
            "methods": list(self.methods),
            "windows": [window_label(k) for k in self.windows],
            "holdout_test_fraction": self.holdout_test_fraction,
            "seed": self.seed,
            "overrides": self.overrides,
            "per_column_normalization": self.per_column_normalization,
        }


@dataclass
class BenchmarkReport:
    dataset: dict[str, Any]
    seed: int
    config: dict[str, Any]
    methods: list[MethodReport]
    total_rows: int
    split: dict[str, list[int]]
    emitted_at: str = ""

    @property
    def failures(self) -> int:
        return sum(m.failures for m in self.methods)

    def method(self, name: str) -> MethodReport:
        for m in self.methods:
            if m.method == name:
                return m
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "version": SCHEMA_VERSION,
            "emitted_at": self.emitted_at,
            "dataset": self.dataset,
            "total_rows": self.total_rows,
            "seed": self.seed,
            "config": self.config,
            "evaluation": EVALUATION_NOTE,
            "split": self.split,
            "methods": [_method_dict(m) for m in self.methods],
        }

    def timings_dict(self) -> dict:
        return {
            "schema": REPORT_SCHEMA + ".timings",
            "version": SCHEMA_VERSION,
            "emitted_at": self.emitted_at,
            "methods": {
                m.method: {
                    "total_train_seconds": round(m.total_train_seconds, 3),
                    "windows": {window_label(r.window): round(r.train_seconds, 3) for r in m.results if r.ok},
                }
                for m in self.methods
            },
        }

    @classmethod
    def from_dict(cls, doc: dict, timings: dict | None = None) -> "BenchmarkReport":
        if doc.get("schema") != REPORT_SCHEMA or doc.get("version") != SCHEMA_VERSION:
            raise SchemaVersionError(
                f"expected {REPORT_SCHEMA} v{SCHEMA_VERSION}, got {doc.get('schema')!r} v{doc.get('version')!r}")
        seconds = (timings or {}).get("methods", {})
        methods = []
        for m in doc["methods"]:
            per_window = seconds.get(m["method"], {}).get("windows", {})
            results = []
            for w in m["windows"]:
                acc = w["accuracy"]
                results.append(WindowResult(
                    window=parse_window(w["window"]),
                    rows=w["rows"],
                    correct=acc["correct"] if acc else 0,
                    total=acc["total"] if acc else 0,
                    train_seconds=per_window.get(w["window"], 0.0),
                    fingerprint=w.get("fingerprint") or "",
                    error=w.get("error"),
                ))
            methods.append(MethodReport(m["method"], results, doc["total_rows"]))
        return cls(doc["dataset"], doc["seed"], doc["config"], methods, doc["total_rows"], doc["split"],
                   doc.get("emitted_at", ""))


def _acc_dict(r: WindowResult | None) -> dict | None:
    if r is None or not r.ok:
        return None
    return {"correct": r.correct, "total": r.total, "value": r.accuracy}


def _method_dict(m: MethodReport) -> dict:
    best = m.best
    return {
        "method": m.method,
        "best_window": window_label(best.window) if best else None,
        "best_window_percent": best.window * 10 if best else None,
        "best_accuracy": _acc_dict(best),
        "last_window_accuracy": _acc_dict(m.last),
        "speedup_ratio": m.speedup_ratio,
        "windows": [
            {"window": window_label(r.window), "rows": r.rows, "accuracy": _acc_dict(r),
             "fingerprint": r.fingerprint or None, "error": r.error}
            for r in m.results
        ],
    }


def run_rising_window(cfg: ExperimentConfig, dataset: Dataset | None = None) -> BenchmarkReport:
    if dataset is None:
        if not cfg.dataset:
            raise ConfigError("no dataset given")
        dataset = load_dataset(load_manifest(cfg.dataset), jobs=cfg.jobs)
    total_rows = require_equal_lengths(dataset.measurements)
    split = holdout_split(dataset, cfg.holdout_test_fraction, cfg.seed)
    cells = [(method, k) for method in cfg.methods for k in cfg.windows]

    def run(cell):
        method, k = cell
        return run_window(dataset, split, k, method, cfg.seed, cfg.overrides, cfg.per_column_normalization)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(run, cells))
    else:
        results = [run(c) for c in cells]
    by_method = {m: [] for m in cfg.methods}
    for (method, _), res in zip(cells, results):
        by_method[method].append(res)
    return BenchmarkReport(
        dataset=dataset_summary(dataset).to_dict(),
        seed=cfg.seed,
        config=cfg.echo(),
        methods=[MethodReport(m, by_method[m], total_rows) for m in cfg.methods],
        total_rows=total_rows,
        split={"train": split[0].tolist(), "test": split[1].tolist()},
        emitted_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


# --- emitters -----------------------------------------------------------------------

def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=True, allow_nan=False) + "\n"


def _fmt(value: float | None, digits: int = 3) -> str:
    return "NA" if value is None else f"{value:.{digits}f}"


def _csv(rows: list[list[str]]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def table1_rows(r: BenchmarkReport) -> list[list[str]]:
    rows = [["method", "b_win_acc", "b_win", "l_win_acc"]]
    for m in r.methods:
        rows.append([m.method, _fmt(m.best_accuracy),
                     window_label(m.best_window) if m.best_window else "NA",
                     _fmt(m.last_window_accuracy)])
    return rows


def table2_rows(r: BenchmarkReport, have_timings: bool = True) -> list[list[str]]:
    windows = sorted({res.window for m in r.methods for res in m.results})
    rows = [["method", "total_train_seconds", "best_window_train_seconds"] + [window_label(k) for k in windows]]
    for m in r.methods:
        per = {res.window: res for res in m.results}
        best = m.best
        row = [m.method,
               _fmt(m.total_train_seconds if have_timings else None),
               _fmt(best.train_seconds if best and have_timings else None)]
        for k in windows:
            res = per.get(k)
            row.append(_fmt(res.train_seconds if res is not None and res.ok and have_timings else None))
        rows.append(row)
    return rows


def fig1_rows(r: BenchmarkReport) -> list[list[str]]:
    rows = [["method", "window", "window_percent", "accuracy"]]
    for m in r.methods:
        for res in m.results:
            rows.append([m.method, window_label(res.window), str(res.window * 10), _fmt(res.accuracy)])
    return rows


def fig2_rows(r: BenchmarkReport) -> list[list[str]]:
    rows = [["method", "best_window", "window_percent", "speedup_ratio"]]
    for m in r.methods:
        k = m.best_window
        rows.append([m.method, window_label(k) if k else "NA", str(k * 10) if k else "NA", _fmt(m.speedup_ratio)])
    return rows


def format_table1(r: BenchmarkReport) -> str:
    rows = table1_rows(r)
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows)


def emit_report(r: BenchmarkReport, out_dir: str | Path, formats=("json", "csv"),
                have_timings: bool = True) -> list[Path]:
    """Write report files into ``out_dir`` and return their paths.

    json: ``report.json`` (deterministic for a given config, seed and data,
    apart from ``emitted_at``) and ``timings.json`` (wall-clock seconds).
    csv: ``table1.csv``, ``table2.csv``, ``fig1_accuracy.csv``,
    ``fig2_window_size.csv``.
    """
    unknown = set(formats) - {"json", "csv"}
    if unknown:
        raise ConfigError(f"unknown report format(s) {sorted(unknown)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    if "json" in formats:
        files["report.json"] = canonical_json(r.to_dict())
        if have_timings:
            files["timings.json"] = canonical_json(r.timings_dict())
    if "csv" in formats:
        files["table1.csv"] = _csv(table1_rows(r))
        files["table2.csv"] = _csv(table2_rows(r, have_timings))
        files["fig1_accuracy.csv"] = _csv(fig1_rows(r))
        files["fig2_window_size.csv"] = _csv(fig2_rows(r))
    written = []
    for name, text in files.items():
        path = out / name
        path.write_text(text)
        written.append(path)
    return written
