"""Exception hierarchy.

Configuration-type problems derive from ``ValueError``; numerical failures
derive from ``RuntimeError``. The CLI maps the first family to exit code 2
and the second to exit code 1.
"""


class DomainError(ValueError):
    """Argument outside the domain of an operation (sigma <= 0, p < 1, u = 0)."""


class StructuralError(ValueError):
    """Mismatched grids, malformed files, inconsistent shapes."""


class UnsupportedError(ValueError):
    """Parameters outside the supported range (dimension, exponents)."""


class UnsupportedExponentError(UnsupportedError):
    pass


class PreconditionError(ValueError):
    pass


class NonCoerciveError(PreconditionError):
    def __init__(self, constant: float):
        super().__init__(f"potential is not coercive: measured c = {constant:.6g} <= 0")
        self.constant = constant


class GeometryError(ValueError):
    """Cutoff support does not fit inside the domain."""


class DivergentIntegralError(ValueError):
    pass


class NoConvergenceError(RuntimeError):
    def __init__(self, message: str, last_value: float | None = None):
        super().__init__(message)
        self.last_value = last_value


class FitQualityError(RuntimeError):
    pass


class ConfigError(ValueError):
    """Malformed or out-of-range scenario configuration."""
