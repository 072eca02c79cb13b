"""Exception types shared across the package."""


class PolqgError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatch(PolqgError):
    """An array does not have the shape implied by the model dimensions."""


class EmptyGrid(PolqgError):
    """A time grid with fewer than one step was requested."""


class OutOfRange(PolqgError):
    """A query time lies outside the grid span [0, T]."""


class NonFinite(PolqgError):
    """An integration or simulation step produced a NaN or infinity."""

    def __init__(self, what: str, node: int):
        self.what = what
        self.node = node
        super().__init__(f"{what}: non-finite value at node {node}")


class PSDViolation(PolqgError):
    """A matrix required to be positive semidefinite fell below tolerance."""

    def __init__(self, what: str, node: int, eigmin: float, floor: float):
        self.what = what
        self.node = node
        self.eigmin = eigmin
        self.floor = floor
        super().__init__(
            f"{what}: eigenvalue {eigmin:.3e} below floor {floor:.3e} at node {node}"
        )


class SingularMatrix(PolqgError):
    """A linear solve against a coefficient matrix failed."""

    def __init__(self, name: str, t: float):
        self.name = name
        self.t = t
        super().__init__(f"singular {name} at t={t!r}")


class InsufficientPaths(PolqgError):
    """A Monte Carlo batch needs at least two paths."""


class ScenarioSyntaxError(PolqgError):
    """A scenario file is not syntactically valid; carries the position."""

    def __init__(self, msg: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        if line is not None:
            msg = f"{msg} (line {line}, column {col})"
        super().__init__(msg)


class UnknownField(PolqgError):
    """A scenario document contains a field outside the schema."""


class ValidationFailure(PolqgError):
    """A model failed assumption checks; carries the report."""

    def __init__(self, report):
        self.report = report
        failed = ", ".join(c.name for c in report.checks if not c.passed)
        super().__init__(f"model validation failed: {failed}")
