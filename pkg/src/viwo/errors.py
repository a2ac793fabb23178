"""Exception types raised across the estimator.

Every error derives from :class:`ViwoError` so callers (the CLI in
particular) can map families of failures onto exit codes.
"""


class ViwoError(Exception):
    """Base class for all estimator errors."""


# -- geometry -----------------------------------------------------------------

class NonPositiveDepth(ViwoError):
    pass


class DegenerateProjection(ViwoError):
    pass


# -- filter state -------------------------------------------------------------

class WindowFull(ViwoError):
    pass


class EmptyWindow(ViwoError):
    pass


class RankDeficientNoNull(ViwoError):
    pass


class NumericalFailure(ViwoError):
    pass


class GateRejected(ViwoError):
    """Chi-square test failed; the measurement batch is an outlier."""

    def __init__(self, gamma, threshold):
        super().__init__(f"chi2 gate rejected: {gamma:.3f} > {threshold:.3f}")
        self.gamma = gamma
        self.threshold = threshold


# -- propagation --------------------------------------------------------------

class TimestampGap(ViwoError):
    pass


class NonMonotonic(ViwoError):
    pass


# -- features -----------------------------------------------------------------

class TriangulationError(ViwoError):
    pass


class InsufficientBaseline(TriangulationError):
    pass


class BehindCamera(TriangulationError):
    pass


class IllConditioned(TriangulationError):
    pass


class Degenerate(TriangulationError):
    """Plane-intersection line triangulation has coincident planes."""


class PointsTooClose(TriangulationError):
    pass


class NoMethodApplicable(TriangulationError):
    pass


class ResidualTooLarge(TriangulationError):
    pass


# -- simulation / io ----------------------------------------------------------

class InfeasiblePlan(ViwoError):
    pass


class ConfigError(ViwoError):
    pass


class DatasetError(ViwoError):
    pass


class MissingFile(DatasetError):
    pass


class ParseError(DatasetError):
    def __init__(self, file, line, msg=""):
        super().__init__(f"{file}:{line}: {msg}" if msg else f"{file}:{line}")
        self.file = str(file)
        self.line = line


class NonMonotonicTimestamps(DatasetError):
    def __init__(self, file, line):
        super().__init__(f"{file}:{line}: timestamps not strictly increasing")
        self.file = str(file)
        self.line = line


class InsufficientOverlap(ViwoError):
    pass
