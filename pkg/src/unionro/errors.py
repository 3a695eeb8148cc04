"""Exception types shared across the package."""


class UnionRoError(Exception):
    """Base class for all package errors."""


class NumericalBreakdown(UnionRoError):
    pass


class NodeLimitExceeded(UnionRoError):
    pass


class CutLimitExceeded(UnionRoError):
    pass


class DomainGuardViolated(UnionRoError):
    pass


class DimensionMismatch(UnionRoError, ValueError):
    pass


class RecourseInfeasible(UnionRoError):
    """The inner recourse LP has no solution for the given (x, v)."""


class RecourseUnbounded(UnionRoError):
    pass


class EmptySubset(UnionRoError, ValueError):
    pass


class UnboundedSubset(UnionRoError, ValueError):
    pass


class DimensionTooLarge(UnionRoError, ValueError):
    pass


class ExplosionCapExceeded(UnionRoError):
    pass


class NoSamplesInUnion(UnionRoError, ValueError):
    pass


class BigMTooSmall(UnionRoError):
    pass


class IterationLimit(UnionRoError):
    pass


class GraphInconsistent(UnionRoError, ValueError):
    pass


class SamplerStarved(UnionRoError):
    pass
