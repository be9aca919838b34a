"""Exception hierarchy shared by every module of the package."""


class HscError(Exception):
    """Base class for all errors raised by hscvad."""


class ShapeError(HscError, ValueError):
    pass


class DegenerateInputError(HscError, ValueError):
    """Input collapses to something undefined (zero norm, empty map, ...)."""


class UsageError(HscError, RuntimeError):
    """API called out of order, e.g. backward with a stale forward cache."""


class DatasetError(HscError, ValueError):
    """Malformed dataset file or record.

    ``record`` holds the zero-based line number of the offending record when
    it is known.
    """

    def __init__(self, message, record=None):
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)
        self.record = record


class CheckpointError(HscError, ValueError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class EmptyPositiveSet(HscError):
    """A contrastive anchor has no positive (or no denominator) entries.

    Training treats this as a skip signal for that loss term, not a failure.
    """


class TrainingError(HscError, RuntimeError):
    pass
