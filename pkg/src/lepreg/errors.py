"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`RegistrationError`. The CLI maps the two families below onto exit
codes: :class:`DataError` subclasses exit with 2, :class:`NumericalError`
subclasses with 3.
"""


class RegistrationError(Exception):
    """Base class. ``stage`` is filled in by the pipeline when known."""

    stage: str | None = None


class DataError(RegistrationError):
    """Inputs are missing, malformed or semantically unusable."""


class NumericalError(RegistrationError):
    """A numerical precondition failed during computation."""


class InvalidArgumentError(DataError, ValueError):
    pass


class UnsupportedFormatError(DataError):
    pass


class CorruptFileError(DataError):
    pass


class EmptySegmentationError(DataError):
    pass


class InsufficientCorrespondenceError(DataError):
    pass


class DegenerateConfigurationError(NumericalError):
    pass


class SingularMatrixError(NumericalError):
    pass


class OrientationReversingError(NumericalError):
    pass


class LogNotDefinedError(NumericalError):
    """Matrix has an eigenvalue on the closed negative real half-line."""

    def __init__(self, eigenvalue, message=None):
        self.eigenvalue = eigenvalue
        super().__init__(
            message
            or f"principal logarithm undefined: eigenvalue {eigenvalue!r} "
            "lies on the closed negative real half-line"
        )


class IndeterminateWeightError(NumericalError):
    def __init__(self, voxel):
        self.voxel = tuple(int(v) for v in voxel)
        super().__init__(
            f"all fusion weights vanish at voxel {self.voxel} and the "
            "background weight is zero"
        )


class IntegrationDivergedError(NumericalError):
    pass
