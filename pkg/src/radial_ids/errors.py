"""Exception types raised across the package."""


class RadialIDSError(Exception):
    """Base class for all package errors."""


class ResolutionTooSmallError(RadialIDSError, ValueError):
    pass


class GridMismatchError(RadialIDSError, ValueError):
    pass


class DegenerateMetricError(RadialIDSError, ValueError):
    """A metric lost positive definiteness.

    ``radius`` is set when the degeneration happens on a radial leaf.
    """

    def __init__(self, message, radius=None):
        super().__init__(message)
        self.radius = radius


class InvalidGeneratorError(RadialIDSError, ValueError):
    pass


class DecayThresholdError(RadialIDSError, ValueError):
    """A decay exponent sits at or below its admissible threshold."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class DivergentTailError(RadialIDSError, ValueError):
    pass


class NonSphericalModelError(RadialIDSError, ValueError):
    pass


class NonPositiveLapseError(RadialIDSError, ValueError):
    pass


class CompatibilityError(RadialIDSError, RuntimeError):
    pass


class ParabolicityWindowError(RadialIDSError, ValueError):
    pass


class DegenerationError(RadialIDSError, RuntimeError):
    """omega reached a nonpositive value during the radial march."""

    def __init__(self, message, radius=None):
        super().__init__(message)
        self.radius = radius


class StepSizeUnderflowError(RadialIDSError, RuntimeError):
    def __init__(self, message, radius=None):
        super().__init__(message)
        self.radius = radius


class NonConvergentSupError(RadialIDSError, RuntimeError):
    pass


class NonConvergentLadderError(RadialIDSError, RuntimeError):
    pass


class InvalidFChoiceError(RadialIDSError, ValueError):
    pass


class WrongDimensionError(RadialIDSError, ValueError):
    pass


class GridTooCoarseError(RadialIDSError, ValueError):
    pass


class ConfigError(RadialIDSError, ValueError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
