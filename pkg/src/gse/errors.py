"""Exception and warning types raised by the GSE pipeline."""


class GseError(Exception):
    """Base class for all pipeline errors."""


class DimensionMismatch(GseError, ValueError):
    pass


class RankDeficient(GseError):
    pass


class InsufficientNeighbors(GseError):
    """Too few weighted points for a rank-q local PCA."""


class DisconnectedGraph(GseError):
    pass


class OutsideDomain(GseError):
    """A point fails the lambda_q > eps3 rank test of its local frame."""


class SampleOutsideDomain(OutsideDomain):
    """A sample point fails the rank test during fitting."""


class EigensolverFailure(GseError):
    pass


class IsolatedPoint(GseError):
    """A query point has zero total kernel weight to the sample."""


class SingularSystem(GseError):
    pass


class EmptyNeighborhood(GseError):
    """A coordinate-space query has no sample embedding in range."""


class RankCollapse(GseError):
    pass


class RejectionFailure(GseError):
    pass


class InvalidConfig(GseError, ValueError):
    pass


class ModelFormatError(GseError):
    pass


class GseWarning(UserWarning):
    pass


class SpectralGapWarning(GseWarning):
    pass


class DegenerateSpectrumWarning(GseWarning):
    pass


class NearSingularWarning(GseWarning):
    pass


class NonConvergenceWarning(GseWarning):
    pass
