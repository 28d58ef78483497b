"""Exception hierarchy.

``ValidationError`` covers bad input (CLI exit code 2), ``FitError`` covers
optimizer and bootstrap failures (exit code 3).
"""


class SpekitError(Exception):
    """Base class for every error raised by the toolkit."""


class ValidationError(SpekitError, ValueError):
    pass


class FitError(SpekitError):
    pass


# emitter model
class DegenerateRates(ValidationError):
    pass


# photon-sim
class CapacityExceeded(ValidationError):
    pass


# correlator
class EmptyChannel(ValidationError):
    pass


class DegenerateNormalization(ValidationError):
    pass


class MissingSync(ValidationError):
    pass


# fitkit
class DegenerateDesign(ValidationError):
    pass


class EmptyDecay(ValidationError):
    pass


class InsufficientSamples(ValidationError):
    pass


class NotConverged(FitError):
    """Optimizer hit its iteration cap. ``result`` holds the best point found."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class InvalidRegime(FitError):
    """Fitted parameters violate the model's physical ordering (e.g. t2 <= t1)."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class UnstableBootstrap(FitError):
    pass


class DegenerateFitWarning(UserWarning):
    """Bootstrap spread shows the requested parameters are not identifiable."""


# thinfilm
class RangeOrder(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


class UnwrapStep(ValidationError):
    pass


class UncalibratableRegion(ValidationError):
    pass


# analysis
class DegenerateGeometry(ValidationError):
    pass


class EmptySpectrum(ValidationError):
    pass


class SmallSampleWarning(UserWarning):
    pass


class IncompleteRecordWarning(UserWarning):
    pass
