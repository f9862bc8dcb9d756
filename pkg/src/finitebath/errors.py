"""Exception types shared across the package."""


class FiniteBathError(Exception):
    """Base class for all library errors."""


class ConfigurationError(FiniteBathError):
    """A scenario, bath, or coupling specification is inconsistent."""


class NumericalFailure(FiniteBathError):
    """An integration or root search could not meet its tolerance."""


class DimensionCapExceeded(FiniteBathError):
    """The exact benchmark would exceed the configured Hilbert-space cap."""
