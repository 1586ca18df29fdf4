"""Exception hierarchy.

Every error carries a short machine-readable ``code`` and the process exit
status the command line reports for it.
"""


class BimAlignError(Exception):
    code = "error"
    exit_status = 1


class ConfigError(BimAlignError, ValueError):
    code = "config_error"
    exit_status = 2


class InvalidArgumentError(ConfigError):
    code = "invalid_argument"


class InvalidSpecError(ConfigError):
    code = "invalid_spec"


class DataIOError(BimAlignError, OSError):
    code = "io_error"
    exit_status = 3


class ParseError(DataIOError):
    code = "parse_error"


class InvalidSceneError(DataIOError):
    code = "invalid_scene"


class NumericError(BimAlignError, ArithmeticError):
    code = "numeric_error"
    exit_status = 4


class DegenerateInputError(NumericError):
    code = "degenerate_input"


class CalibrationError(NumericError):
    code = "calibration_failure"


class AssociationError(NumericError):
    code = "association_error"


class EmptyProblemError(BimAlignError):
    code = "empty_problem"
    exit_status = 5


class EmptyPlanError(EmptyProblemError):
    code = "empty_plan"


class MetricUndefinedError(EmptyProblemError):
    code = "metric_undefined"
