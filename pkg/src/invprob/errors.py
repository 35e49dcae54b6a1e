"""Exception hierarchy shared by all modules."""


class InferenceError(Exception):
    """Base class for every error raised by invprob."""


class NumericalError(InferenceError):
    """A computation could not produce a trustworthy number."""


class NonConvergence(NumericalError):
    pass


class NonFinite(NumericalError):
    pass


class NoSignChange(NumericalError):
    pass


class DerivativeVanishes(NumericalError):
    pass


class NonDifferentiable(NumericalError):
    pass


class EmptySide(InferenceError):
    pass


class TrivialLocusCrossed(NumericalError):
    pass


class PosteriorNotNormalizable(NumericalError):
    pass


class TrivialLocusDatum(InferenceError):
    pass


class ZeroMarginal(NumericalError):
    pass


class NonMonotoneInParameter(NumericalError):
    pass


class SingularInformation(NumericalError):
    pass


class NotIdentifiable(InferenceError):
    pass


class FactorRejected(InferenceError):
    """A custom consistency factor failed the relative-invariance gate."""
