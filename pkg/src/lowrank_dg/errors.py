"""Exception hierarchy shared across the package."""


class LowRankDGError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(LowRankDGError, ValueError):
    pass


class InvalidMode(LowRankDGError, ValueError):
    pass


class InvalidRank(LowRankDGError, ValueError):
    pass


class InvalidDomain(LowRankDGError, ValueError):
    pass


class NumericError(LowRankDGError, ArithmeticError):
    pass


class EmptyBatch(LowRankDGError, ValueError):
    pass


class EmptyDomain(LowRankDGError, ValueError):
    pass


class LabelSpaceError(LowRankDGError, ValueError):
    pass


class FormatError(LowRankDGError, ValueError):
    """Malformed file, manifest or checkpoint."""


class ConfigError(LowRankDGError, ValueError):
    pass
