"""Exception hierarchy shared across the package."""


class ScatterRaError(Exception):
    """Base class for every error raised by scatter_ra."""


class InvariantError(ScatterRaError, ValueError):
    """A value violates a domain invariant (range, shape, ordering)."""


class ReadingFormatError(ScatterRaError):
    """A reading file could not be parsed."""


class BadMagicError(ReadingFormatError):
    pass


class UnsupportedVersionError(ReadingFormatError):
    pass


class TruncatedPayloadError(ReadingFormatError):
    pass


class DimensionError(ReadingFormatError):
    pass


class DatasetError(ScatterRaError):
    """Manifest problems: missing files, duplicates, mismatched readings."""


class NoValidGradientError(ScatterRaError):
    """Every timestep of a reading was dark, so no gradient can be formed."""


class DegenerateFitError(ScatterRaError, ValueError):
    pass


class PlanMismatchError(ScatterRaError):
    """A split plan or model does not belong to the dataset it is applied to."""


class ReadingFailureError(ScatterRaError):
    """A pipeline stage failed on one reading; carries its id."""

    def __init__(self, reading_id, cause):
        super().__init__(f"reading {reading_id}: {type(cause).__name__}: {cause}")
        self.reading_id = reading_id
        self.cause = cause
