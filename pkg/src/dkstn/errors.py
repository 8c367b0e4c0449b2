"""Exception hierarchy shared by every dkstn module.

All failures raised on purpose derive from DkstnError so the CLI can map
them to a single-line ``error:`` message and exit code 1.
"""


class DkstnError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(DkstnError):
    """Array shapes incompatible with the requested operation."""


class FormatError(DkstnError):
    """A binary container has a bad magic number, version, or structure."""


class LengthError(DkstnError):
    """A binary payload is shorter or longer than its header declares."""


class CoverageError(DkstnError):
    """A series is too short for the requested window or lead time."""


class AlignmentError(DkstnError):
    """Dates of two series do not line up."""


class ParameterError(DkstnError):
    """An argument value is outside its allowed range."""


class ChannelError(DkstnError):
    """A required variable channel is missing from a series."""


class BatchError(DkstnError):
    """Batch too small for batch-statistics normalization in train mode."""


class ConfigError(DkstnError):
    """Run-configuration file is malformed or names an unknown key."""


class TrainingError(DkstnError):
    """Non-finite loss or gradient encountered during optimization."""


class UndefinedMetricError(DkstnError):
    """A metric denominator vanished (zero-norm truth, zero component)."""


class DegeneracyError(DkstnError):
    """Leading eigenvalues too close for the mode split to be meaningful."""


class PipelineError(DkstnError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[stage {stage}] {cause}")
        self.stage = stage
        self.cause = cause
