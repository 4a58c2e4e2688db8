"""Exception hierarchy shared by the solvers and the scenario runner."""


class KGBohmError(Exception):
    """Base class for all library errors."""


class DegenerateGridError(KGBohmError, ValueError):
    """An axis is too short for the requested stencil."""


class StabilityError(KGBohmError, ValueError):
    """A stability precondition (CFL or similar) is violated."""

    def __init__(self, message, bound=None, value=None):
        super().__init__(message)
        self.bound = bound
        self.value = value


class DivergenceError(KGBohmError, FloatingPointError):
    """A time march produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class AllNodeError(KGBohmError, ValueError):
    """Every point of a time slice lies below the node threshold."""


class VarianceError(KGBohmError, ValueError):
    """A four-vector was passed with the wrong index placement."""


class ScenarioError(KGBohmError, ValueError):
    """A scenario file could not be parsed or validated."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line


class CausticError(DivergenceError):
    """Characteristics of the hidden-phase march crossed (gradient catastrophe)."""
