"""Exception types shared across the package."""


class FastnoseError(Exception):
    """Base class for all package errors."""


class ScheduleError(FastnoseError):
    """Invalid stimulus specification or valve schedule."""


class PlantError(FastnoseError):
    """Invalid sensor/hotplate state or parameters."""


class CalibrationError(FastnoseError):
    """Heater calibration could not be performed."""


class ConvergenceError(FastnoseError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class FeatureError(FastnoseError):
    """Feature extraction contract violated (alignment, bounds, domain)."""


class DataError(FastnoseError):
    """Malformed dataset, recording, manifest or model file."""


class ProtocolError(FastnoseError):
    """Inconsistent protocol/configuration request."""
