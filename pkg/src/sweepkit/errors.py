"""Exception hierarchy shared by all pipeline stages."""


class SweepKitError(Exception):
    """Base class for all errors raised by sweepkit."""


# geometry / calibration
class InsufficientPoints(SweepKitError):
    pass


class DegenerateConfiguration(SweepKitError):
    pass


class CoplanarPoints(DegenerateConfiguration):
    pass


class MissingEdge(SweepKitError):
    pass


class InvalidDepth(SweepKitError):
    pass


# trajectory extraction
class MarkersMissing(SweepKitError):
    pass


class OutOfBounds(SweepKitError):
    pass


class NoSeeds(SweepKitError):
    pass


# surface reconstruction
class TooManyHoles(SweepKitError):
    pass


class TooFewNeighbors(SweepKitError):
    pass


class IllConditionedPatch(SweepKitError):
    pass


# path planning
class DegeneratePath(SweepKitError):
    pass


class NoNormals(SweepKitError):
    pass


class EmptyPath(SweepKitError):
    pass


# motion monitor
class LabelMismatch(SweepKitError):
    pass


class IndexOutOfRange(SweepKitError):
    pass


class UnknownStage(SweepKitError):
    pass


# compliance control
class NegativeStiffness(SweepKitError):
    pass


class DimensionMismatch(SweepKitError):
    pass


class UnstableParameters(SweepKitError):
    pass


# compounding
class EmptyInput(SweepKitError):
    pass


class NoVesselFound(SweepKitError):
    pass


# simulator / scenario engine
class PhantomNotVisible(SweepKitError):
    pass


class AbortedSweep(SweepKitError):
    """Raised when the resume gate rejects a motion compensation result."""

    def __init__(self, message, stage=None, e_mc=None):
        super().__init__(message)
        self.stage = stage
        self.e_mc = e_mc


class UnknownParameter(SweepKitError):
    pass
