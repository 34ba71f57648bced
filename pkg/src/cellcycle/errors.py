"""Exception hierarchy shared by all modules."""


class CellCycleError(Exception):
    """Base class for errors raised by the package."""


class NonPositiveSize(CellCycleError, ValueError):
    pass


class NegativeAge(CellCycleError, ValueError):
    pass


class OutOfRange(CellCycleError, ValueError):
    pass


class DivergentIntegral(CellCycleError, ArithmeticError):
    pass


class SurvivalExhausted(CellCycleError, ArithmeticError):
    pass


class PreconditionViolated(CellCycleError, ValueError):
    pass


class GridMismatch(CellCycleError, ValueError):
    pass


class NotInvertible(CellCycleError, ArithmeticError):
    pass


class SchemaViolation(CellCycleError, ValueError):
    """Configuration failed validation; ``violations`` holds (path, message) pairs."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = ["%s: %s" % (p, m) for p, m in self.violations]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


class NoConvergence(CellCycleError, RuntimeError):
    """Iteration stopped without meeting its tolerance.

    ``diagnostic`` carries whatever the caller needs to explain the failure
    (for the fixed-point search: residual history and moment trajectories).
    """

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic
