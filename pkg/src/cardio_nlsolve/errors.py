"""Exception hierarchy."""


class CardioError(Exception):
    """Base class for package errors."""


class ConfigurationError(CardioError, ValueError):
    """Invalid configuration or argument."""


class LinearSolveBreakdown(CardioError, ArithmeticError):
    """CG detected p^T A p <= 0 outside the null space."""

    def __init__(self, iteration: int, curvature: float):
        super().__init__(f"CG breakdown at iteration {iteration}: p^T A p = {curvature:.3e}")
        self.iteration = iteration
        self.curvature = curvature


class CapabilityError(CardioError, TypeError):
    """The nonlinear system lacks a capability the method requires."""


class StepFailure(CardioError, RuntimeError):
    """A time step failed (gating Newton or nonlinear solve)."""

    def __init__(self, message: str, step: int | None = None, trace=None, node: int | None = None):
        super().__init__(message)
        self.step = step
        self.trace = trace
        self.node = node


class SchemaError(CardioError, ValueError):
    """CSV input does not conform to the expected schema."""
