"""Exception types raised across the package."""


class DegenerateNodesError(ValueError):
    """Interpolation nodes do not determine a unique thin-plate spline."""


class AssemblyError(ValueError):
    """A triangle carries a metric that is not symmetric positive definite."""


class TooLargeError(ValueError):
    """A dense (oracle-only) code path was asked to handle too many unknowns."""


class NumericalError(ArithmeticError):
    """A factorization or solve failed, or produced non-finite values."""


class EmptyMaskError(ValueError):
    """A measurement mask ended up with no observed nodes."""
