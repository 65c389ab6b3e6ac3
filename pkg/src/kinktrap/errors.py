"""Exception hierarchy.

Errors fall into three families, which the command-line entry point maps to
distinct exit codes: configuration problems (2), physics failures (3) and
file I/O (4, raised as the builtin ``OSError``).
"""


class KinkTrapError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(KinkTrapError, ValueError):
    """Invalid or inconsistent input parameters."""


class StabilityViolation(ConfigError):
    pass


class OrderingViolation(ConfigError):
    pass


class TimestepTooLarge(ConfigError):
    pass


class PhysicsError(KinkTrapError, RuntimeError):
    """A computation could not reach a physically valid result."""


class CoincidentIons(PhysicsError):
    pass


class NonFinite(PhysicsError):
    pass


class NoConvergence(PhysicsError):
    pass


class NegativeCurvature(PhysicsError):
    pass


class ZeroFrequencyMode(PhysicsError):
    pass


class AmbiguousStructure(PhysicsError):
    """More than one zigzag phase flip was found.

    The flips are not suppressed: ``multiplicity`` and ``kinks`` carry them
    so annihilation studies can still use the configuration.
    """

    def __init__(self, message, kinks=()):
        super().__init__(message)
        self.kinks = list(kinks)
        self.multiplicity = len(self.kinks)


class KinkLost(PhysicsError):
    pass


class KinkNotFormed(PhysicsError):
    pass


class KinkEscaped(PhysicsError):
    def __init__(self, message, side=0):
        super().__init__(message)
        self.side = side


class NotOverdamped(PhysicsError):
    pass


class InsufficientOverlap(PhysicsError):
    pass


class OrbitUnstable(PhysicsError):
    pass


class NotCrystallized(PhysicsError):
    pass


class ExposureUnderrun(PhysicsError):
    pass


class OverlappingSpots(PhysicsError):
    def __init__(self, message, pairs=()):
        super().__init__(message)
        self.pairs = list(pairs)


class CountMismatch(PhysicsError):
    def __init__(self, message, found=0, expected=0):
        super().__init__(message)
        self.found = found
        self.expected = expected
