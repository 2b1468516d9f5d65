"""Rising-window protocol: anchored prefixes of 10%, 20%, ..., 100% of a measurement."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .dataio import Measurement
from .errors import ConfigError, EmptyInput, InvalidParameter, ShapeMismatch

WINDOWS = tuple(range(1, 11))
STD_FLOOR = 1e-12


def check_window(k: int) -> int:
    if isinstance(k, bool) or int(k) != k or not 1 <= k <= 10:
        raise InvalidParameter(f"window index must be an integer in 1..10, got {k!r}")
    return int(k)


def parse_window(text: str | int) -> int:
    """``"w3"`` (or ``3``) -> 3."""
    if isinstance(text, int):
        return check_window(text)
    t = text.strip().lower()
    if t.startswith("w"):
        t = t[1:]
    try:
        return check_window(int(t))
    except ValueError:
        raise InvalidParameter(f"bad window name {text!r}; expected w1..w10") from None


def window_label(k: int) -> str:
    return f"w{check_window(k)}"


def window_row_count(total_rows: int, k: int) -> int:
    """Rows in window ``k``: ``max(1, floor(T * k / 10))``."""
    k = check_window(k)
    if total_rows < 1:
        raise InvalidParameter("total_rows must be >= 1")
    # integer arithmetic keeps floor exact for every T
    return max(1, (total_rows * k) // 10)


@dataclass(frozen=True)
class WindowedSample:
    features: np.ndarray
    label: int

    @property
    def rows(self) -> int:
        return self.features.shape[0]

    @property
    def cols(self) -> int:
        return self.features.shape[1]


def slice_window(m: Measurement, k: int) -> WindowedSample:
    n = window_row_count(m.rows, k)
    return WindowedSample(m.values[:n], m.label)


def slice_rows(m: Measurement, rows: int) -> WindowedSample:
    """Prefix with an absolute row count (used by stored models)."""
    return WindowedSample(m.values[:rows], m.label)


def require_equal_lengths(measurements: Sequence[Measurement]) -> int:
    lengths = {m.rows for m in measurements}
    if len(lengths) != 1:
        raise ConfigError(f"measurements have unequal lengths {sorted(lengths)}; "
                          "truncate or resample before windowing")
    return lengths.pop()


@dataclass(frozen=True)
class Normalizer:
    """z-score transform.

    By default ``mean`` and ``std`` are scalars pooled over every entry of
    every training matrix. With ``per_column`` they are length-C_f vectors.
    """
    mean: np.ndarray
    std: np.ndarray
    per_column: bool = False
    fingerprint: str = ""

    def to_dict(self) -> dict:
        return {
            "mean": np.atleast_1d(self.mean).tolist(),
            "std": np.atleast_1d(self.std).tolist(),
            "per_column": self.per_column,
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Normalizer":
        per_column = bool(doc["per_column"])
        mean = np.asarray(doc["mean"], dtype=np.float64)
        std = np.asarray(doc["std"], dtype=np.float64)
        if not per_column:
            mean, std = mean.reshape(()), std.reshape(())
        return cls(mean, std, per_column, doc.get("fingerprint", ""))

    def invert(self, s: WindowedSample) -> WindowedSample:
        return WindowedSample(s.features * self.std + self.mean, s.label)


IDENTITY = Normalizer(np.float64(0.0), np.float64(1.0))


def _fingerprint(stack: Iterable[np.ndarray]) -> str:
    h = hashlib.sha256()
    for a in stack:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


def fit_normalizer(samples: Sequence[WindowedSample], per_column: bool = False) -> Normalizer:
    if not samples:
        raise EmptyInput("cannot fit a normalizer on zero samples")
    cols = {s.cols for s in samples}
    if len(cols) != 1:
        raise ShapeMismatch(f"samples disagree on column count: {sorted(cols)}")
    stacked = np.concatenate([s.features for s in samples], axis=0)
    if per_column:
        mean = stacked.mean(axis=0)
        std = np.maximum(stacked.std(axis=0), STD_FLOOR)
    else:
        mean = np.float64(stacked.mean())
        std = np.float64(max(float(stacked.std()), STD_FLOOR))
    return Normalizer(mean, std, per_column, _fingerprint(s.features for s in samples))


def apply_normalizer(n: Normalizer, s: WindowedSample) -> WindowedSample:
    return WindowedSample((s.features - n.mean) / n.std, s.label)


def flatten_sample(s: WindowedSample) -> np.ndarray:
    """Time-major flattening: entry ``(t, c)`` lands at ``t * C_f + c``."""
    return np.ascontiguousarray(s.features).reshape(-1)
