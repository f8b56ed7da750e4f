"""
Exception hierarchy for GS-TAP Lab

Library code raises these; the CLI maps each category to an exit code.
"""


class GSLabError(Exception):
    """Base class for all GS-TAP Lab errors"""


class ConfigError(GSLabError, ValueError):
    """Unknown key, malformed value or out-of-range value in a run configuration"""

    def __init__(self, key: str, message: str):
        self.key = key
        self.message = message
        # both parts stay in args so the error survives pickling across worker processes
        super().__init__(key, message)

    def __str__(self) -> str:
        return f"{self.key}: {self.message}"


class SizeMismatchError(GSLabError, ValueError):
    """Spin configurations or disorder samples of incompatible sizes"""


class QuadratureError(GSLabError, ArithmeticError):
    """Invalid quadrature order or an unusable rule"""


class IntegrandError(QuadratureError):
    """Integrand evaluated to a non-finite value or the wrong shape at the nodes"""


class EnumerationCapError(GSLabError):
    """State space too large for exact enumeration"""


class ConvergenceError(GSLabError):
    """Fixed-point iteration did not reach the requested tolerance"""


class ExperimentError(GSLabError, ValueError):
    """Invalid experiment request (bad grid, mode or fit input)"""


class DisorderFormatError(GSLabError, ValueError):
    """Serialized disorder sample with a bad header or payload"""
