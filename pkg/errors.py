"""
Semantic errors shared by every treesic module.

Public functions raise these instead of bare ValueError/RuntimeError so the CLI
can tell a bad request (exit 1) from a numerical failure (exit 2).
"""


class TreeSicError(Exception):
    """Base error for treesic."""


class InputValidationError(TreeSicError, ValueError):
    """Inputs violate an operation contract."""


class NumericalError(TreeSicError, FloatingPointError):
    """A computation could not meet its accuracy or termination contract."""


class GammaPoleError(NumericalError, ValueError):
    """Gamma function evaluated at a non-positive integer."""


class PrecisionLossError(NumericalError):
    """Floating-point evaluation cannot certify the requested accuracy."""


class NonConvergenceError(NumericalError):
    """A series or search did not converge within its term budget."""


class HorizonError(NumericalError):
    """A supremum sits on the edge of its search horizon."""


class TraceMismatchError(NumericalError):
    """Operational slot trace disagrees with the recursion count."""


class RecursionDepthError(NumericalError):
    """Simulated splitting tree exceeded the depth trap."""
