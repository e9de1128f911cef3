"""Exception types raised across the package."""


class MixWeightsError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(MixWeightsError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class NotPositiveDefinite(MixWeightsError, ArithmeticError):
    pass


class NonFiniteResult(MixWeightsError, ArithmeticError):
    pass


class SpecError(MixWeightsError, ValueError):
    """Invalid task specification (probabilities, scales, sizes)."""


class InvalidRho(MixWeightsError, ValueError):
    pass


class EmptyPool(MixWeightsError, ValueError):
    pass


class EmptyBatch(MixWeightsError, ValueError):
    pass


class EmptyTestSet(MixWeightsError, ValueError):
    pass


class ZeroVector(MixWeightsError, ValueError):
    pass


class BadMagic(MixWeightsError, ValueError):
    pass


class CountMismatch(MixWeightsError, ValueError):
    pass


class TruncatedFile(MixWeightsError, ValueError):
    pass


class DegenerateVariance(MixWeightsError, ArithmeticError):
    pass


class LossUnderflow(MixWeightsError, ArithmeticError):
    """A holdout mean loss is too small to take its reciprocal safely."""

    def __init__(self, message, domains=()):
        super().__init__(message)
        self.domains = tuple(domains)


class BatchTooSmall(MixWeightsError, ValueError):
    pass


class ConfigError(MixWeightsError, ValueError):
    """Bad experiment configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class GridMismatch(MixWeightsError, ValueError):
    pass


class UnknownSuite(MixWeightsError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""
