"""``sniffbench`` command-line entry point.

Subcommands: validate, synth, bench, train, predict, report. Exit codes:
0 success, 1 configuration or data error (including usage errors),
2 a benchmark finished but some (method, window) cells failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .bench import (
    METHODS,
    BenchmarkReport,
    ExperimentConfig,
    WindowModel,
    emit_report,
    fit_window_model,
    format_table1,
    run_rising_window,
)
from .dataio import dataset_summary, generate_synthetic, load_dataset, load_manifest, write_dataset
from .errors import ConfigError, SniffBenchError
from .windowing import parse_window

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2
SEED_ENV = "SNIFFBENCH_SEED"
CONFIG_KEYS = {"dataset", "methods", "windows", "seed", "test_fraction", "out", "jobs", "format",
               "overrides", "per_column_normalization"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _methods(text: str) -> list[str]:
    names = _csv_list(text)
    unknown = [m for m in names if m not in METHODS]
    if unknown or not names:
        raise argparse.ArgumentTypeError(f"unknown method(s) {unknown}; choose from {','.join(METHODS)}")
    return names


def _windows(text: str) -> list[int]:
    try:
        return [parse_window(w) for w in _csv_list(text)]
    except SniffBenchError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _formats(text: str) -> list[str]:
    names = _csv_list(text)
    if not names or set(names) - {"json", "csv"}:
        raise argparse.ArgumentTypeError("format must be a subset of json,csv")
    return names


def _resolve_seed(flag: int | None, config_value=None) -> int:
    if flag is not None:
        return flag
    if config_value is not None:
        return int(config_value)
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return _u64(env)
        except (ValueError, argparse.ArgumentTypeError):
            raise ConfigError(f"{SEED_ENV}={env!r} is not an unsigned 64-bit integer") from None
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sniffbench", description="Rising-window early-classification benchmark for e-nose data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="suppress per-cell log lines")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="load a manifest and its data files, print a summary")
    v.add_argument("manifest", nargs="?", help="manifest JSON (or use --dataset)")
    v.add_argument("--dataset", dest="dataset_flag")
    v.add_argument("--format", choices=("text", "json"), default="text")

    s = sub.add_parser("synth", help="write a synthetic dataset and its manifest")
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=3)
    s.add_argument("--per-class", type=int, default=10)
    s.add_argument("--rows", type=int, default=100)
    s.add_argument("--sensors", type=int, default=6)
    s.add_argument("--separation", type=float, default=5.0)
    s.add_argument("--noise", type=float, default=1.0)
    s.add_argument("--seed", type=_u64)

    b = sub.add_parser("bench", help="run the rising-window experiment")
    b.add_argument("--config", help="JSON file whose keys mirror these flags; flags win")
    b.add_argument("--dataset", help="dataset manifest JSON")
    b.add_argument("--methods", type=_methods, help=f"comma list from {','.join(METHODS)} (default: svm)")
    b.add_argument("--windows", type=_windows, help="comma list such as w1,w2,w10 (default: w1..w10)")
    b.add_argument("--seed", type=_u64, help="master seed (default: $SNIFFBENCH_SEED or 0)")
    b.add_argument("--test-fraction", type=float, help="holdout fraction per class (default: 0.3)")
    b.add_argument("--out", help="output directory (default: sniffbench-out)")
    b.add_argument("--jobs", type=int, help="concurrent cells (default: CPU count)")
    b.add_argument("--format", type=_formats, help="json,csv or either alone (default: both)")

    t = sub.add_parser("train", help="fit one model on a whole dataset at one window")
    t.add_argument("--dataset", required=True)
    t.add_argument("--method", choices=METHODS, default="svm")
    t.add_argument("--window", type=parse_window, required=True)
    t.add_argument("--seed", type=_u64)
    t.add_argument("--model", required=True, help="output model JSON path")

    pr = sub.add_parser("predict", help="classify measurements with a saved model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--dataset", required=True)
    pr.add_argument("--out", help="predictions CSV path (default: stdout)")

    r = sub.add_parser("report", help="re-emit tables from a saved report.json")
    r.add_argument("report", help="report.json, or a directory containing it")
    r.add_argument("--out")
    r.add_argument("--format", type=_formats)
    return p


# --- subcommands ------------------------------------------------------------------------

def cmd_validate(args) -> int:
    path = args.manifest or args.dataset_flag
    if not path:
        raise ConfigError("validate needs a manifest path")
    ds = load_dataset(load_manifest(path)).validate()
    summary = dataset_summary(ds)
    print(summary.to_json() if args.format == "json" else summary.to_text())
    return EXIT_OK


def cmd_synth(args) -> int:
    ds = generate_synthetic(args.classes, args.per_class, args.rows, args.sensors, args.separation,
                            _resolve_seed(args.seed), noise=args.noise)
    manifest = write_dataset(ds, args.out)
    print(manifest)
    return EXIT_OK


def _load_config(path: str | None) -> tuple[dict, Path | None]:
    if not path:
        return {}, None
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)}")
    return doc, Path(path).resolve().parent


def resolve_bench(args) -> tuple[ExperimentConfig, Path, list[str]]:
    doc, base = _load_config(args.config)

    def pick(flag, key, default=None):
        return flag if flag is not None else doc.get(key, default)

    dataset = args.dataset
    if dataset is None and "dataset" in doc:
        dataset = str((base / doc["dataset"]) if base else doc["dataset"])
    if not dataset:
        raise ConfigError("bench needs --dataset or a config with a dataset key")
    methods = pick(args.methods, "methods", ["svm"])
    windows = pick(args.windows, "windows", list(range(1, 11)))
    formats = pick(args.format, "format", ["json", "csv"])
    methods = _csv_list(methods) if isinstance(methods, str) else methods
    windows = _csv_list(windows) if isinstance(windows, str) else windows
    formats = _csv_list(formats) if isinstance(formats, str) else formats
    jobs = pick(args.jobs, "jobs", os.cpu_count() or 1)
    if int(jobs) < 1:
        raise ConfigError("jobs must be >= 1")
    cfg = ExperimentConfig(
        dataset=dataset,
        methods=tuple(methods),
        windows=tuple(windows),
        holdout_test_fraction=float(pick(args.test_fraction, "test_fraction", 0.3)),
        seed=_resolve_seed(args.seed, doc.get("seed")),
        overrides=doc.get("overrides", {}),
        per_column_normalization=bool(doc.get("per_column_normalization", False)),
        jobs=int(jobs),
    )
    out = Path(pick(args.out, "out", "sniffbench-out"))
    return cfg, out, list(formats)


def cmd_bench(args) -> int:
    cfg, out, formats = resolve_bench(args)
    report = run_rising_window(cfg)
    emit_report(report, out, formats)
    print(format_table1(report))
    if report.failures:
        print(f"{report.failures} cell(s) failed; see report.json", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_dataset(load_manifest(args.dataset)).validate()
    model, seconds = fit_window_model(ds.measurements, args.window, args.method, ds.manifest.class_names,
                                      _resolve_seed(args.seed))
    path = Path(args.model)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.to_json() + "\n")
    print(f"{args.method} {len(ds.measurements)} measurements, {model.row_count} rows, "
          f"{seconds:.3f} s -> {path}")
    return EXIT_OK


def _read_model(path: str) -> WindowModel:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read model {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"model {path} is not a JSON object")
    try:
        return WindowModel.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"model {path} is malformed: {exc!r}") from None


def cmd_predict(args) -> int:
    model = _read_model(args.model)
    ds = load_dataset(load_manifest(args.dataset))
    predicted = model.predict(ds.measurements)
    rows = [["source_id", "predicted_class"]]
    rows += [[m.source_id, model.class_names[int(c)]] for m, c in zip(ds.measurements, predicted)]
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)
    else:
        csv.writer(sys.stdout, lineterminator="\n").writerows(rows)
    return EXIT_OK


def cmd_report(args) -> int:
    src = Path(args.report)
    if src.is_dir():
        src = src / "report.json"
    try:
        doc = json.loads(src.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report {src}: {exc}") from None
    timings_path = src.with_name("timings.json")
    timings = json.loads(timings_path.read_text()) if timings_path.exists() else None
    report = BenchmarkReport.from_dict(doc, timings)
    if args.out:
        emit_report(report, args.out, args.format or ["json", "csv"], have_timings=timings is not None)
    print(format_table1(report))
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "synth": cmd_synth,
    "bench": cmd_bench,
    "train": cmd_train,
    "predict": cmd_predict,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except SniffBenchError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
