"""Exception types shared across the package."""


class MeanFieldQError(Exception):
    """Base class for all package errors."""


class RowNotStochastic(MeanFieldQError):
    pass


class ParallelEmbeddings(MeanFieldQError):
    pass


class ReducibleChain(MeanFieldQError):
    pass


class NonPositiveInitialDist(MeanFieldQError):
    pass


class ConvergenceFailure(MeanFieldQError):
    pass


class ZeroMassState(MeanFieldQError):
    pass


class IterationCapExceeded(MeanFieldQError):
    pass


class DiscountNotContractive(MeanFieldQError):
    pass


class UnsupportedLaw(MeanFieldQError):
    pass


class UnsupportedActivation(MeanFieldQError):
    pass


class DimensionMismatch(MeanFieldQError):
    pass


class EpisodeLengthMismatch(MeanFieldQError):
    pass


class NonFiniteState(MeanFieldQError):
    pass


class AsymmetricInput(MeanFieldQError):
    pass


class NotPositiveDefinite(MeanFieldQError):
    pass


class SpecHashMismatch(MeanFieldQError):
    pass


class GridMismatch(MeanFieldQError):
    pass


class ConfigError(MeanFieldQError):
    pass
