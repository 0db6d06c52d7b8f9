"""Exception hierarchy shared by all modules."""


class SmgsbrError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(SmgsbrError, ValueError):
    """An argument lies outside its admissible range."""


class UnsupportedModelError(SmgsbrError, ValueError):
    """Requested delay/degree combination has no polynomial basis."""


class NumericOverflowError(SmgsbrError, ArithmeticError):
    """A map evaluation produced a non-finite value."""


class EscapeError(SmgsbrError):
    """A simulated orbit left the admissible bounding box."""

    def __init__(self, index, value, bound):
        self.index = index
        self.value = value
        self.bound = bound
        super().__init__(
            f"orbit escaped at index {index}: |x|={abs(value):.6g} > {bound:g}"
        )


class SingularityError(SmgsbrError, ArithmeticError):
    """A Jacobian along an orbit is not invertible."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"singular Jacobian at orbit index {index}")


class InvertibilityError(SmgsbrError, ValueError):
    """The map has no closed-form inverse in delay coordinates."""


class SingularModelError(SmgsbrError, ArithmeticError):
    """The weighted design matrix is rank deficient even after jitter."""


class WindowLengthError(SmgsbrError, ValueError):
    """Sliding windows would be shorter than the model allows."""


class DegenerateCloudError(SmgsbrError, ValueError):
    """A point cloud has no well-defined principal axis."""


class ManifoldError(SmgsbrError):
    """Too many chains failed while assembling a manifold cloud."""


class ConfigError(SmgsbrError, ValueError):
    """Invalid run configuration (unknown key, bad value, parse failure)."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        super().__init__(message)
