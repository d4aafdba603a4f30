"""Exception taxonomy shared across the package.

CLI exit codes map onto these: ValidationError -> 3, CheckpointVersionError
-> 4, anything else unexpected -> 5 (usage errors are click's 2).
"""


class CellflowError(Exception):
    """Base class for package errors."""


class ValidationError(CellflowError):
    """Rejected input: bad shapes, malformed data, violated preconditions."""


class FormatError(ValidationError):
    """Malformed file content; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        loc = ""
        if path is not None:
            loc += str(path)
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.line = line
        self.path = path


class CheckpointVersionError(CellflowError):
    """Checkpoint format version not supported by this build."""


class PoiModalityMissing(ValidationError):
    """Raised when an operation needs POIs but the set is empty (K = 0)."""


class ModelNotTrainedError(CellflowError):
    """Generation requested from a model that has not been trained."""
