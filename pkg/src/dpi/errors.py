"""Exception hierarchy.

Every error carries a short ``code`` string so callers (and the CLI) can
tell failure classes apart without string matching.
"""


class DPIError(Exception):
    code = "dpi_error"


class ConfigError(DPIError, ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    code = "config"

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DimensionError(DPIError, ValueError):
    code = "dimension"


class NumericError(DPIError, ArithmeticError):
    """Non-finite value encountered; ``coordinate`` locates it when known."""

    code = "numeric"

    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class DivergenceError(NumericError):
    code = "diverged"


class CheckpointError(DPIError, IOError):
    code = "checkpoint"


class TruncatedCheckpointError(CheckpointError):
    code = "checkpoint_truncated"


class SchemaVersionError(CheckpointError):
    code = "checkpoint_version"


class HashMismatchError(CheckpointError):
    code = "checkpoint_hash"


class ChecksumError(CheckpointError):
    code = "checkpoint_checksum"
