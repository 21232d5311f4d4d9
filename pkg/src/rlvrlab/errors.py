"""Exception hierarchy shared by every rlvrlab module."""

from __future__ import annotations


class RLVRLabError(Exception):
    """Base class for all errors raised by rlvrlab."""


class ConfigurationError(RLVRLabError):
    """Unknown ids, missing labels, inconsistent settings."""


class InputError(RLVRLabError, ValueError):
    """Malformed arguments to a pure operation."""


class ContractError(RLVRLabError):
    """A caller violated a documented precondition between components."""


class SchemaError(RLVRLabError):
    """A record file does not match the expected schema.

    ``line`` is the 1-based line number of the offending record, when known.
    """

    def __init__(self, message: str, *, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class SchemaVersionError(SchemaError):
    """Record file written by an incompatible schema version."""


class ShortfallError(RLVRLabError):
    """Not enough retained instances to draw the requested sample."""

    def __init__(self, requested: int, available: int):
        super().__init__(
            f"requested {requested} instances but only {available} are retained "
            f"(shortfall {requested - available})"
        )
        self.requested = requested
        self.available = available
        self.shortfall = requested - available


class TrainingAborted(RLVRLabError):
    """Non-finite parameters or gradients during training.

    ``record`` carries the diagnostic payload that was also written to the run
    log; ``log`` is the partial run log up to the failing step.
    """

    def __init__(self, message: str, record: dict, log=None):
        super().__init__(message)
        self.record = record
        self.log = log


class JudgeError(RLVRLabError):
    """A judge backend could not produce a verdict."""


class JudgePartialResult(JudgeError):
    """Remote judging failed part-way; ``completed`` holds the verdicts obtained."""

    def __init__(self, message: str, completed: list):
        super().__init__(message)
        self.completed = completed


class MissingArtifactError(RLVRLabError):
    """A CLI stage could not find the artifact produced by an upstream stage."""

    def __init__(self, path, producer: str):
        super().__init__(f"missing input {path}; run `rlvrlab {producer}` first")
        self.path = path
        self.producer = producer
