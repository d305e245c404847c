"""Exception types shared across the package."""


class DimensionMismatchError(ValueError):
    """An array argument does not have the dimension the model requires."""


class SegmentTooShortError(ValueError):
    """The trajectory segment is too short to set up the learning system."""


class DegenerateNormalizationError(ValueError):
    """The cost normalization rule cannot be applied (e.g. zero trace)."""


class ConfigError(ValueError):
    """A configuration file or preset is missing, malformed, or inconsistent."""
