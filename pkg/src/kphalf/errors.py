"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class KPError(Exception):
    """Base class for all package errors."""


class ConfigError(KPError):
    """Problem with user supplied configuration (CLI exit code 2)."""


class NumericalError(KPError):
    """Numerical failure (CLI exit code 3)."""


class ParseError(ConfigError):
    pass


class UnknownFamily(ConfigError):
    pass


class GridDataMalformed(ConfigError):
    pass


class DomainViolation(ConfigError):
    pass


class NonConvergence(NumericalError):
    def __init__(self, message: str, err_estimate: float | None = None):
        super().__init__(message)
        self.err_estimate = err_estimate


class IntegrandFailure(NumericalError):
    def __init__(self, message: str, abscissa=None):
        super().__init__(message)
        self.abscissa = abscissa


class SingularPoint(NumericalError):
    pass


class OverflowRisk(NumericalError):
    pass


class RealityViolation(NumericalError):
    pass


class CauchyKernelTooClose(NumericalError):
    pass


class GridTooCoarse(NumericalError):
    pass


class ContractionFailure(NumericalError):
    def __init__(self, message: str, contraction: float | None = None):
        super().__init__(message)
        self.contraction = contraction


class ProbeNotConverged(NumericalError):
    pass


class MissingField(KPError):
    pass
