"""Exception hierarchy shared by all pshmm modules."""


class PshmmError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(PshmmError, ValueError):
    pass


class InsufficientDataError(PshmmError, ValueError):
    pass


class NumericalFailureError(PshmmError, ArithmeticError):
    pass


class SingularModelError(NumericalFailureError):
    pass


class RankDeficientError(NumericalFailureError):
    pass


class SingularSigmaError(NumericalFailureError):
    """Second-moment matrix too ill-conditioned to invert."""

    def __init__(self, message, condition=float("inf")):
        super().__init__(message)
        self.condition = condition


class IllConditionedMeansError(NumericalFailureError):
    pass


class DegenerateScoreError(NumericalFailureError):
    pass


class DegenerateBeliefError(NumericalFailureError):
    pass


class DegenerateMixtureError(NumericalFailureError):
    pass


class OptimizationFailureError(NumericalFailureError):
    """Newton/log-barrier solver did not converge; ``last_iterate`` holds the final point."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class NotWarmError(PshmmError, RuntimeError):
    pass


class UndefinedMetricError(PshmmError, ValueError):
    pass


class IngestionError(PshmmError, ValueError):
    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = list(rows)


class ExperimentInvalidError(PshmmError, RuntimeError):
    pass
