"""Exception types raised across the package."""


class QDLAError(Exception):
    """Base class for all package errors."""


class ConfigError(QDLAError, ValueError):
    """Invalid experiment configuration or invalid input value."""


class RegimeError(QDLAError, ValueError):
    """A measurement record was passed to the pipeline for the other regime."""


class SingularConfigurationError(QDLAError, ValueError):
    """Parameters sit on a pole of a closed-form expression."""


class IntegrationError(QDLAError, RuntimeError):
    """Numerical time integration failed."""


class ResolutionError(QDLAError, ValueError):
    """Scan grid is too coarse to resolve the lock-in lobe."""


class NoLockError(QDLAError, RuntimeError):
    """No lock-in point could be identified."""


class EstimationError(QDLAError, RuntimeError):
    """Parameter fit diverged or produced an unusable estimate."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class AliasingError(QDLAError, ValueError):
    """Spectral peaks fold onto each other and cannot be assigned."""
