"""Exception hierarchy shared across the benchmark."""


class BenchError(Exception):
    """Base class for every error raised by poisonbench."""


class DimensionError(BenchError, ValueError):
    pass


class NumericError(BenchError, ValueError):
    pass


class EmptyInputError(BenchError, ValueError):
    pass


class ConfigurationError(BenchError, ValueError):
    pass


class IntegrityError(BenchError, RuntimeError):
    """A component returned something that breaks the round contract."""


class HarnessError(BenchError, RuntimeError):
    """The harness handed a component more than it is allowed to see."""


class UndefinedMetricError(BenchError, ValueError):
    pass
