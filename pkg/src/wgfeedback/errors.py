"""Exception types shared across the package.

Three failure families are kept distinct so callers can react sensibly:
shape mismatches (programming errors in tensor plumbing), violated
preconditions on physics or state objects, and numerical breakdowns
inside otherwise well-posed linear algebra.
"""


class TensorShapeError(ValueError):
    """Axes or extents of an operand do not match the operation."""


class InvariantError(ValueError):
    """A documented precondition or state invariant was violated."""


class NumericalError(RuntimeError):
    """Linear algebra failed to converge or produced non-finite values."""


class ScenarioError(ValueError):
    """A run configuration could not be validated."""
