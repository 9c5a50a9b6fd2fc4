class AutotuneError(Exception):
    """Base class for every error raised by the tuner stack"""


class ParameterError(AutotuneError, ValueError):
    pass


class ReindexError(AutotuneError, LookupError):
    """A global id has no local id in the partition (sampler escaped its partition)"""


class ShapeError(AutotuneError, ValueError):
    pass


class ConfigurationError(AutotuneError, ValueError):
    pass


class GraphFormatError(AutotuneError, ValueError):
    pass


class EncodingError(AutotuneError, ValueError):
    pass


class SchemaError(AutotuneError, ValueError):
    pass


class UndefinedRateError(AutotuneError, ArithmeticError):
    pass


class UndefinedThroughputError(AutotuneError, ArithmeticError):
    pass


class UndefinedScoreError(AutotuneError, ArithmeticError):
    pass


class CommandError(Exception):
    """Raised by routers; carries the process exit code the CLI should return"""

    def __init__(self, exit_code: int, detail: str):
        super().__init__(detail)
        self.exit_code = exit_code
        self.detail = detail


EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
