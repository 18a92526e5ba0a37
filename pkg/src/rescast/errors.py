"""Exception hierarchy shared by all modules."""


class RescastError(Exception):
    """Base class for every error raised by the package."""


class DataError(RescastError):
    pass


class EmptySeries(DataError):
    pass


class ConstantSeries(DataError):
    pass


class OutOfRange(DataError):
    pass


class EmptyTrain(OutOfRange):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NonHourly(ParseError):
    pass


class AlignmentError(DataError):
    pass


class NoOverlap(AlignmentError):
    pass


class ExcessiveGaps(AlignmentError):
    pass


class FeatureError(RescastError):
    pass


class InsufficientHistory(FeatureError):
    pass


class InsufficientCoverage(FeatureError):
    pass


class GapInWindow(FeatureError):
    pass


class GapAtLag(FeatureError):
    pass


class EmptyMatrix(FeatureError):
    pass


class AvailabilityViolation(FeatureError):
    """A feature tried to read data the forecaster may not see at time t."""


class FitError(RescastError):
    pass


class SingularSystem(FitError):
    pass


class InvalidK(FitError):
    pass


class MisalignedRegressors(FitError):
    pass


class MissingRegressors(FitError):
    pass


class EmptyTraining(FitError):
    pass


class WidthMismatch(FitError):
    pass


class EmptyGrid(FitError):
    pass


class EvaluationError(RescastError):
    pass


class EmptyRun(EvaluationError):
    pass


class MixedEnergyTypes(EvaluationError):
    pass
