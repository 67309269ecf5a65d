"""Shared exception types.

Exit-code contract for the CLI: usage errors -> 1, data errors -> 2,
split-protocol violations -> 3.
"""

from __future__ import annotations


class FieldwiseError(Exception):
    """Base class for all package errors."""


class DataError(FieldwiseError):
    """Malformed or inconsistent input data (CLI exit code 2)."""


class ParseError(DataError):
    def __init__(self, source: str, line: int, message: str):
        super().__init__(f"{source}:{line}: {message}")
        self.source = source
        self.line = line


class IntegrityError(DataError):
    """Referential integrity broken (e.g. an output points at an unknown example)."""


class SchemaMismatch(DataError):
    """A record does not carry exactly the schema's field names."""


class AlignmentError(DataError):
    """Predictions and gold records cannot be aligned by example_id."""


class ConfigError(DataError):
    """Invalid generator or pipeline configuration."""


class RangeError(DataError):
    """A probability or fraction is outside [0, 1]."""


class DuplicateKey(DataError):
    """A uniqueness contract was violated."""


class TooFewModels(DataError):
    """An operation needs at least two models."""


class EmptyTrainingSet(DataError):
    pass


class EmptyDevSet(DataError):
    pass


class MissingBase(DataError):
    """The policy's base model is absent from the candidate set."""


class EmptyCandidates(DataError):
    pass


class ProtocolViolation(FieldwiseError):
    """A train/tune stage tried to read labels outside its allowed splits (CLI exit code 3)."""


class UsageError(FieldwiseError):
    """Bad command-line invocation (CLI exit code 1)."""
