"""Exception hierarchy shared by all modules."""


class DeturckFlowError(Exception):
    """Base class for errors raised by this package."""


class InvalidMeshError(DeturckFlowError, ValueError):
    pass


class NonManifoldError(InvalidMeshError):
    pass


class InvalidShapeError(DeturckFlowError, ValueError):
    pass


class MeshParseError(DeturckFlowError, ValueError):
    """Malformed mesh file. ``line`` is 1-based, or None at end of file."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = f"line {line}" if line is not None else "end of file"
        if path is not None:
            where = f"{path}: {where}"
        super().__init__(f"{where}: {message}")


class DegenerateNormalError(DeturckFlowError, ArithmeticError):
    pass


class AssemblyError(DeturckFlowError, ArithmeticError):
    def __init__(self, message, element=None):
        self.element = element
        super().__init__(message)


class SolverFailure(DeturckFlowError, ArithmeticError):
    """Iterative solver did not reach its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")


class SingularKernelError(DeturckFlowError, ArithmeticError):
    pass


class DegenerateReferenceError(DeturckFlowError, ArithmeticError):
    pass


class MeshDegenerationError(DeturckFlowError, ArithmeticError):
    """A time step produced a degenerate mesh; the run has to stop."""

    def __init__(self, message, min_area=None, sigma=None):
        self.min_area = min_area
        self.sigma = sigma
        super().__init__(message)


class FixedPointNonConvergence(DeturckFlowError, ArithmeticError):
    """The BGN fixed-point iteration hit its iteration cap."""

    def __init__(self, message, iterations, previous, last):
        self.iterations = iterations
        self.previous = previous
        self.last = last
        super().__init__(message)


class SpecError(DeturckFlowError, ValueError):
    """Invalid experiment specification."""
