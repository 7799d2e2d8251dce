"""Exception types raised across the package."""


class WvaError(Exception):
    """Base class for every error raised by wvadelay."""


class InvalidArgumentError(WvaError, ValueError):
    pass


class DivergentWeakValueError(WvaError, ValueError):
    """Post-selection orthogonal to the pre-selection (beta = 0)."""


class ResolutionError(WvaError, ValueError):
    """Sampling grid too coarse or too small for the requested computation."""


class ApproximationDomainError(WvaError, ValueError):
    """Closed-form diffraction requested outside the narrow-slit regime."""


class EmptyIntensityError(WvaError, ValueError):
    pass


class UnsupportedExponentError(WvaError, ValueError):
    pass


class LengthError(WvaError, ValueError):
    pass


class ShapeError(WvaError, ValueError):
    pass


class NoPeakError(WvaError, ValueError):
    """Cross-correlation has no usable maximum (constant input)."""


class UnderdeterminedFitError(WvaError, ValueError):
    pass


class DegenerateCalibrationError(WvaError, ValueError):
    pass


class InsufficientDataError(WvaError, ValueError):
    pass


class EmptyBandError(WvaError, ValueError):
    pass


class NormalizationError(WvaError, ValueError):
    pass


class FormatError(WvaError, ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UsageError(WvaError):
    pass


class StageError(WvaError):
    """A pipeline stage failed; wraps the underlying error."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
