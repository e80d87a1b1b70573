"""Exception types shared across the package."""


class AuthenticatedChannelError(RuntimeError):
    """An interceptor tried to write a channel that carries authentication."""


class ZeroTemplateError(ValueError):
    """The watermark template has zero energy, so a gain cannot be estimated."""


class CalibrationError(ValueError):
    """Threshold calibration was asked to work from unusable clean statistics."""


class DegenerateBaselineError(ValueError):
    """A windowed RMS baseline fell below the floor, the scaling gain is undefined."""


class NonInvertibleError(ValueError):
    """A sensor reading lies outside the invertible range of the sensor map."""
