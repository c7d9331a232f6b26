"""Exception types shared across the package."""


class ServebenchError(Exception):
    """Base class for all user-facing errors."""


class SpecSyntaxError(ServebenchError):
    """Config document could not be parsed; carries a position when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column if column is not None else '?'})"
        super().__init__(message)


class SpecValidationError(ServebenchError):
    """A config value violates a constraint; names the field and the rule."""

    def __init__(self, field: str, constraint: str):
        self.field = field
        self.constraint = constraint
        super().__init__(f"{field}: {constraint}")


class CatalogError(ServebenchError):
    """Hardware catalog is missing, malformed, or inconsistent."""


class RepositoryError(ServebenchError):
    """Model repository operation failed (duplicate register, missing id, ...)."""


class BackendStartError(ServebenchError):
    """Backend could not be started (e.g. model weights exceed device memory)."""


class PerfDBError(ServebenchError):
    """Performance store violation (duplicate job id, missing record, ...)."""


class AnalysisError(ServebenchError):
    """Analysis input is incomplete or inconsistent (e.g. sweep holes)."""


class TraceError(ServebenchError):
    """Scheduler trace file is malformed; message carries the line number."""
