"""Exception types shared across the package."""


class DegenerateGeometryError(ValueError):
    """An observation function was evaluated where it is undefined
    (e.g. user coincident with an anchor, or zero horizontal separation
    for a bearing channel)."""


class NumericalError(RuntimeError):
    """A matrix factorization or solve failed, or the (equilibrated)
    matrix was too ill-conditioned to trust."""


class CsvFormatError(ValueError):
    """A scenario CSV file is malformed."""


class ConfigError(ValueError):
    """A scenario or pipeline configuration is invalid. The message names
    the offending field path(s)."""
