"""Exception hierarchy shared by all modules."""


class AltMinError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(AltMinError, ValueError):
    pass


class InsufficientMeasurementsError(AltMinError, ValueError):
    pass


class CovarianceError(AltMinError, ValueError):
    pass


class SingularityError(AltMinError, ArithmeticError):
    pass


class DegenerateInputError(AltMinError, ValueError):
    """Zero signal, zero observations or a similar measure-zero input."""


class PartitionError(AltMinError, ValueError):
    pass


class DomainError(AltMinError, ValueError):
    """Angle outside [0, pi/2] or outside a table's coverage."""


class ConfigError(AltMinError, ValueError):
    pass
