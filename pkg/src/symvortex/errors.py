"""Exception hierarchy shared by all modules."""


class VortexError(Exception):
    """Base class for every error raised by the package."""


class NonPositiveDimension(VortexError, ValueError):
    pass


class NonPositiveConformalFactor(VortexError, ValueError):
    pass


class GeometryMismatch(VortexError, ValueError):
    pass


class ShapeMismatch(VortexError, ValueError):
    pass


class NotProper(VortexError):
    pass


class NotASolution(VortexError):
    pass


class AmbiguousZero(VortexError):
    """Winding number of a cell is not resolvable at the current grid spacing."""


class LineSearchStall(VortexError):
    pass


class SingularSystem(VortexError):
    pass


class NoConvergence(VortexError):
    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class PointsTooClose(VortexError, ValueError):
    pass


class SpectralFailure(VortexError):
    pass


class EtaOutOfBall(VortexError, ValueError):
    pass


class DenominatorBlowup(VortexError):
    pass


class StepBlowup(VortexError):
    pass


class SnapshotVersionMismatch(VortexError):
    pass


class ConfigError(VortexError, ValueError):
    pass
