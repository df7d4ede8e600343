"""Exception types shared across the package."""


class DopfError(Exception):
    """Base class for all package errors."""


class InputError(DopfError):
    """Invalid argument values or inconsistent dimensions."""


class DegenerateMarginalError(DopfError):
    """Forecast pinned at 0 or at capacity: the Beta marginal collapses to a point mass."""


class DegenerateColumnError(DopfError):
    """A history column is constant and cannot be rank-transformed."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"history column {column!r} is constant")


class NumericalError(DopfError):
    """Numerical failure: singular or indefinite matrix, unbounded subproblem."""


class StructureError(DopfError):
    """Feeder graph is not a tree rooted at the substation."""


class InfeasibleError(DopfError):
    """No feasible point exists; carries a description of the worst violation."""

    def __init__(self, message, worst=None):
        self.worst = worst
        super().__init__(message)


class ParseError(DopfError):
    """File parsing failure, pointing at the offending file and line."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")
