"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Bad shapes, out-of-range indices or inconsistent settings."""


class NumericalError(FloatingPointError):
    """A loss, gradient or network output became non-finite."""


class InputError(ValueError):
    """Invalid runtime input, e.g. a non-finite action passed to an environment."""
