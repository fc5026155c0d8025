class PadisError(Exception):
    """Base class for errors raised by this package."""


class NumericalAbort(PadisError):
    """A training or sampling run produced non-finite or diverging values."""


class ConfigError(PadisError, ValueError):
    pass
