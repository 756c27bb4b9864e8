"""Exception taxonomy shared across the package.

ValidationError maps to CLI exit code 1 (bad inputs / config); the numerical
failures map to exit code 2.
"""


class GridTuneError(Exception):
    """Base class for all package errors."""


class ValidationError(GridTuneError):
    """Inputs violate a structural precondition or a file/config is malformed."""


class NumericalError(GridTuneError):
    """Base for failures of numerical procedures on structurally valid inputs."""


class StabilityError(NumericalError):
    """A matrix that must be Hurwitz is not, or a response is singular."""


class InfeasibleError(NumericalError):
    """A constraint set is empty or a required feasible point does not exist."""


class IdentificationError(NumericalError):
    """System identification could not produce a usable model."""
