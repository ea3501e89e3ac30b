"""Exception types shared across the package.

The CLI maps ValidationError to exit code 1 and NumericalError to exit
code 2; everything else is a bug and propagates.
"""


class SmallAreaError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(SmallAreaError, ValueError):
    """Structurally invalid input: bad schema, bad value, inconsistent ids."""


class NumericalError(SmallAreaError, RuntimeError):
    """A computation failed: no convergence, singular system, bad calibration."""


class ConvergenceError(NumericalError):
    """An iterative solver did not reach its tolerance."""


class SeparationError(ConvergenceError):
    """Complete or quasi-complete separation in a logistic working model."""


class CalibrationError(NumericalError):
    """A prior calibration has no solution in the searched range."""
