"""Exception hierarchy.

Every error carries the process exit code the command line front-end
reports for it (2 validation, 3 convergence, 4 capacity, 5 infeasibility).
"""


class DpsError(Exception):
    exit_code = 1


class ValidationError(DpsError, ValueError):
    exit_code = 2


class NonPositiveParameter(ValidationError):
    pass


class UnstableSystem(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class InvalidDirection(ValidationError):
    pass


class UnequalWeights(ValidationError):
    pass


class ModelMismatch(ValidationError):
    pass


class NotSeparatedFromZero(ValidationError):
    pass


class WeightsNotStrictlyIncreasing(ValidationError):
    pass


class BoundaryState(ValidationError):
    pass


class OutOfTruncation(ValidationError):
    pass


class ZeroMass(ValidationError):
    pass


class NoConvergence(DpsError):
    exit_code = 3


class PopulationGuardTripped(DpsError):
    exit_code = 3


class CapacityExceeded(DpsError):
    exit_code = 4


class Infeasible(DpsError):
    exit_code = 5


class InfeasibleRegion(Infeasible):
    pass


class NonpositiveDelta(Infeasible):
    pass


class DegenerateDenominator(Infeasible):
    pass
