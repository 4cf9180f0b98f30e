"""Exception hierarchy shared across the package."""


class DRCapError(Exception):
    """Base class for all errors raised by drcap."""


class ConfigError(DRCapError, ValueError):
    """Invalid configuration (bounds, schema files, CLI parameters)."""


class SchemaError(DRCapError, ValueError):
    """Input file is missing a required column or key."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class RowError(DRCapError, ValueError):
    """A data row could not be parsed or violates a record invariant."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class DuplicateTimestampError(RowError):
    pass


class AlignmentError(DRCapError, ValueError):
    """Timestamp gap that is not an integer multiple of the sampling interval."""


class GapError(DRCapError, ValueError):
    def __init__(self, message, start=None, span=None):
        super().__init__(message)
        self.start = start
        self.span = span


class EmptyDatasetError(DRCapError, ValueError):
    pass


class SchemaCoverageError(DRCapError, ValueError):
    """A value falls outside every bin of a schema dimension."""


class StateNotFoundError(DRCapError, KeyError):
    """Reference state absent from a lookup table.

    ``suggestions`` lists present states that differ in exactly one coordinate.
    """

    def __init__(self, state, suggestions=()):
        self.state = state
        self.suggestions = list(suggestions)
        hint = ", ".join(str(tuple(s)) for s in self.suggestions) or "none"
        super().__init__(f"state {tuple(state)} not in table (neighbours: {hint})")

    def __str__(self):
        return self.args[0]


class InfeasibleControlError(DRCapError, ValueError):
    def __init__(self, message, u_min=None):
        super().__init__(message)
        self.u_min = u_min


class InsufficientDataError(DRCapError, ValueError):
    pass


class DomainError(DRCapError, ValueError):
    """Argument outside the mathematical domain of a function."""
