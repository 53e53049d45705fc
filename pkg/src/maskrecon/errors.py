"""Error taxonomy shared by every module.

The CLI maps these onto exit codes: config/usage errors -> 1, data errors -> 2,
numerical failures -> 3.
"""


class MaskreconError(Exception):
    """Base class for all package errors."""


class ConfigError(MaskreconError):
    """Invalid configuration. Collects every violation before raising."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class InvalidRangeError(MaskreconError, ValueError):
    """A numeric argument is outside its documented domain."""


class ShapeError(MaskreconError, ValueError):
    """Operands have incompatible or indivisible shapes."""


class EmptyInputError(MaskreconError, ValueError):
    """An operation that needs at least one element received none."""


class InsufficientObservationsError(MaskreconError):
    """A mask observes no entries, so estimation cannot proceed."""


class NumericalError(MaskreconError):
    """A numerical routine failed: SVD non-convergence, non-finite values."""


class DataError(MaskreconError):
    """Base class for dataset ingestion problems."""


class DataFormatError(DataError):
    """A data file has the wrong magic number or structure."""


class TruncatedDataError(DataError):
    """A data file ended before its declared payload."""


class CountMismatchError(DataError):
    """Image and label files declare different record counts."""


class CheckpointFormatError(MaskreconError):
    """Checkpoint has wrong magic bytes or an unsupported version."""


class CorruptCheckpointError(MaskreconError):
    """Checkpoint payload is truncated or inconsistent with its shape table."""
