"""Exception hierarchy for the mmkf package."""


class MMKFError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MMKFError, ValueError):
    """An argument violates a documented precondition (shape, sign, ...)."""


class NumericalError(MMKFError, ArithmeticError):
    """A linear-algebra step could not be carried out reliably."""

    def __init__(self, message, matrix_name=None):
        super().__init__(message)
        self.matrix_name = matrix_name


class NumericalBlowupError(NumericalError):
    """Model integration produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class MisspecificationError(MMKFError):
    """Smoothed inflation became non-positive.

    This usually points to misspecified error covariances or a smoothing
    weight that is too large.
    """


class ConfigurationError(MMKFError):
    """Model or experiment configuration is inconsistent."""


class ConfigParseError(ConfigurationError):
    """A configuration file could not be parsed or validated."""

    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line


class DivergenceError(MMKFError):
    """The filter analysis drifted far from the truth for too long."""

    def __init__(self, message, cycle=None, method=None):
        super().__init__(message)
        self.cycle = cycle
        self.method = method
