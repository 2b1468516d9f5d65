"""Exception and warning types raised across sniffbench."""

from __future__ import annotations


class SniffBenchError(Exception):
    """Base class for every error raised by this package."""


# --- dataset ingestion -----------------------------------------------------

class ManifestError(SniffBenchError, ValueError):
    pass


class MissingField(ManifestError):
    def __init__(self, key: str, detail: str = ""):
        self.key = key
        msg = f"manifest field {key!r} is missing or empty"
        super().__init__(f"{msg}: {detail}" if detail else msg)


class DuplicateColumn(ManifestError):
    def __init__(self, column: str, detail: str = ""):
        self.column = column
        msg = f"duplicate column {column!r}"
        super().__init__(f"{msg} ({detail})" if detail else msg)


class UnknownClassInLabelRule(ManifestError):
    def __init__(self, key: str, class_name: str):
        self.key = key
        self.class_name = class_name
        super().__init__(f"label_rule entry {key!r} maps to unknown class {class_name!r}")


class FileUnreadable(SniffBenchError, OSError):
    pass


class NoMatchingFiles(FileUnreadable):
    def __init__(self, pattern: str, root: str):
        self.pattern = pattern
        super().__init__(f"no files match {pattern!r} under {root}")


class NonNumericCell(SniffBenchError, ValueError):
    def __init__(self, path: str, row: int, col: int, token: str):
        self.path, self.row, self.col, self.token = path, row, col, token
        super().__init__(f"{path}: non-numeric cell {token!r} at row {row}, column {col}")


class RowCountMismatch(SniffBenchError, ValueError):
    pass


class InvalidDataset(SniffBenchError, ValueError):
    pass


class TooFewSamplesPerClass(InvalidDataset):
    pass


class InvalidParameter(SniffBenchError, ValueError):
    pass


class ConfigError(SniffBenchError, ValueError):
    pass


class EmptyInput(SniffBenchError, ValueError):
    pass


class LengthMismatch(SniffBenchError, ValueError):
    pass


# --- models ----------------------------------------------------------------

class DimensionMismatch(SniffBenchError, ValueError):
    pass


class SingleClassInput(SniffBenchError, ValueError):
    pass


class ShapeMismatch(SniffBenchError, ValueError):
    pass


class InputTooSmall(SniffBenchError, ValueError):
    pass


class NonFiniteLoss(SniffBenchError, ArithmeticError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite training loss {loss!r} in epoch {epoch}")


class SchemaVersionError(SniffBenchError, ValueError):
    pass


class WindowMismatch(SniffBenchError, ValueError):
    pass


# --- warnings --------------------------------------------------------------

class DegenerateVariance(UserWarning):
    """Pooled variance fell below the floor and was clamped."""


class IterationCapExceeded(UserWarning):
    """SMO hit its iteration cap; the returned model is the best found so far."""
