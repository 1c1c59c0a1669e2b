"""Exception hierarchy shared across the package."""


class AlgsodeError(Exception):
    """Base class for all library errors."""


class OutOfChartError(AlgsodeError):
    """A point lies outside the chart box it was required to be in."""


class LeftDomainError(AlgsodeError):
    """A flow left the chart box before reaching the requested time."""

    def __init__(self, message, t_exit=None):
        super().__init__(message)
        self.t_exit = t_exit


class IntegrationFailureError(AlgsodeError):
    """The initial-value integrator failed (step underflow / step budget)."""


class NotComposableError(AlgsodeError):
    """Groupoid multiplication requested for a non-composable pair."""


class NotVerticalError(AlgsodeError):
    """A tangent vector fails the source-verticality check."""


class PsiSingularError(AlgsodeError):
    """The fiber matrix of the vertical-bundle morphism is near singular."""


class NoConvergenceError(AlgsodeError):
    """Newton iteration exhausted its budget without meeting the tolerance."""

    def __init__(self, message, best=None, residual_norm=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual_norm = residual_norm
        self.iterations = iterations


class SingularJacobianError(AlgsodeError):
    """Newton Jacobian condition estimate above the singularity threshold."""


class NotQuadraticError(AlgsodeError):
    """Operation requires a fiberwise homogeneous quadratic SODE."""


class BoxTooLargeError(AlgsodeError):
    """A requested sampling box pokes out of the chart box."""


class HTooSmallError(AlgsodeError):
    """Retraction requested at a step size too small to be well posed."""


class ExpressionError(AlgsodeError):
    """Base class for expression language errors."""


class ParseError(ExpressionError):
    """Syntax error; carries position and the offending token."""

    def __init__(self, message, line, col, token):
        super().__init__(f"{message} at line {line}, column {col}: {token!r}")
        self.line = line
        self.col = col
        self.token = token


class EvalError(ExpressionError):
    """Guarded evaluation failure (division by zero, sqrt of a negative, ...)."""


class StencilError(AlgsodeError):
    """A finite-difference stencil point could not be evaluated."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class ConfigError(AlgsodeError):
    """Invalid run configuration or model description."""
