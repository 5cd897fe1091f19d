"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data could not be parsed or violates a format contract."""


class ParseError(DataError):
    """A file did not match its declared grammar."""


class NumericalError(ArithmeticError):
    """A computation hit a numerically degenerate configuration."""


class DegenerateRotationError(NumericalError):
    """Rotation logarithm requested too close to an angle of pi."""


class EmptyIndexError(ValueError):
    """Spatial query issued against an index or map with no points."""


class NoOverlapError(ValueError):
    """Two trajectories share no timestamps within the association window."""
