"""Exception hierarchy.

Every error carries a short machine-readable ``category`` so the CLI can
print a single parsable line and pick an exit code.
"""


class SkytraceError(Exception):
    category = "error"
    exit_code = 1


class ShapeError(SkytraceError, ValueError):
    category = "shape"


class ContractError(SkytraceError, ValueError):
    category = "contract"


class ConfigError(SkytraceError, ValueError):
    category = "config"
    exit_code = 2


class SchemaError(SkytraceError, ValueError):
    category = "schema"
    exit_code = 3


class DataError(SkytraceError, ValueError):
    category = "data"
    exit_code = 3


class DegenerateTrajectoryError(DataError):
    category = "degenerate-trajectory"


class InsufficientDataError(DataError):
    category = "insufficient-data"


class FormatError(SkytraceError, ValueError):
    category = "format"
    exit_code = 4


class TrainingDivergedError(SkytraceError, FloatingPointError):
    category = "training-diverged"
    exit_code = 5
