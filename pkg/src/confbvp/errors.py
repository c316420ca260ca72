"""Shared exception types."""


class ConeViolationError(ValueError):
    """An eigenvalue vector left the admissible cone.

    Carries the worst signed margin and, when available, the offending
    node indices.
    """

    def __init__(self, message, margin=None, nodes=None):
        super().__init__(message)
        self.margin = margin
        self.nodes = nodes


class DefinitenessError(ValueError):
    """A metric (or pencil) failed to be positive definite at a node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class ParameterError(ValueError):
    """A parameter is outside the range the theory requires (e.g. t >= 1)."""


class SpecError(ValueError):
    """A problem specification is inconsistent or incomplete."""


class NewtonError(RuntimeError):
    """Newton iteration did not converge; carries the best state reached."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ContinuationError(RuntimeError):
    """Homotopy continuation failed; carries the trace accumulated so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class OutOfDomainError(RuntimeError):
    """A geodesic left the computational slab; carries the exit parameter."""

    def __init__(self, message, exit_parameter=None):
        super().__init__(message)
        self.exit_parameter = exit_parameter


class ChartError(RuntimeError):
    """Boundary chart construction failed (foot point search, inversion)."""
