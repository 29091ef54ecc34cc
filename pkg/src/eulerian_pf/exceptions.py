"""Exception types raised across the package."""


class DegenerateGeometryError(ValueError):
    """An element or facet has (numerically) zero measure."""


class UnsupportedDimensionError(ValueError):
    """Operation is only defined for a different spatial dimension."""


class InvalidTestFunctionError(ValueError):
    """A test field does not vanish near the domain boundary."""


class InfeasibleStateError(ValueError):
    """A deformation/phase state violates det > 0, Ciarlet-Necas or z in [0, 1]."""


class ConfigError(ValueError):
    """Configuration file could not be parsed or validated."""
