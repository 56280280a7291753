"""Exception hierarchy shared across the package.

Every error carries a short machine-parsable ``category`` that the CLI maps
to a stable exit code.
"""


class CtdistillError(Exception):
    category = "internal"


class ConfigError(CtdistillError):
    category = "config"


class InputError(CtdistillError):
    category = "input"


class ParameterError(CtdistillError):
    category = "parameter"


class DimensionError(CtdistillError):
    category = "dimension"


class ShapeError(CtdistillError):
    category = "shape"


class DegenerateVectorError(CtdistillError):
    category = "degenerate"


class SamplingError(CtdistillError):
    category = "sampling"


class BoundsError(CtdistillError):
    category = "bounds"


class StateError(CtdistillError):
    category = "state"


class NumericError(CtdistillError):
    category = "numeric"


# CLI exit codes; 0 is success, 1 is reserved for unexpected crashes.
EXIT_CODES = {
    "config": 2,
    "input": 3,
    "parameter": 4,
    "dimension": 5,
    "shape": 5,
    "degenerate": 6,
    "sampling": 7,
    "bounds": 8,
    "state": 9,
    "numeric": 10,
    "internal": 1,
}
