"""Exception hierarchy.

Errors fall into three families that the command line maps onto exit codes:
configuration problems (1), data problems (2) and numerical failures (3).
"""


class PyramidSSLError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(PyramidSSLError):
    exit_code = 1


class DataError(PyramidSSLError):
    exit_code = 2


class NumericalError(PyramidSSLError):
    exit_code = 3


# configuration
class SpecError(ConfigError):
    pass


class FractionOutOfRange(ConfigError):
    pass


class BudgetExceeded(ConfigError):
    pass


class OutOfRange(ConfigError):
    pass


# geometry / data
class LevelOutOfRange(DataError):
    pass


class OutOfBounds(DataError):
    pass


class FormatError(DataError):
    pass


class IoError(DataError):
    pass


class DataFormatError(FormatError):
    pass


class ExhaustedRetries(DataError):
    pass


class AmbiguousMatch(DataError):
    pass


class EmptyRegion(DataError):
    pass


class NoPatches(DataError):
    pass


class EmptyClass(DataError):
    pass


class MissingTensor(DataError):
    pass


class ShapeMismatch(DataError):
    pass


# numerics
class GraphNotEvaluated(NumericalError):
    pass


class Diverged(NumericalError):
    pass


class GradientCheckFailed(NumericalError):
    pass
