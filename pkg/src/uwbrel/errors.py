"""Exception types raised across the library."""


class UwbrelError(Exception):
    """Base class for all library errors."""


class DegenerateGeometry(UwbrelError):
    """Virtual source coincides with a node; the path geometry is undefined."""


class InvalidParams(UwbrelError):
    """A parameter set violates its invariants (e.g. non-positive scale)."""


class InsufficientMpcs(UwbrelError):
    """Too few multipath components for the requested estimator."""


class DegenerateObjective(UwbrelError):
    """Every grid evaluation of the objective is zero or -inf."""


class PermutationCapExceeded(UwbrelError):
    """A per-observer MPC count exceeds the exact permutation-sum cap."""


class RankDeficient(UwbrelError):
    """The stacked system is rank deficient or too ill-conditioned to solve."""


class AntiparallelDirections(UwbrelError):
    """An MPC has near-antiparallel arrival directions at the two nodes."""


class NotPositiveDefinite(UwbrelError):
    """A supplied covariance matrix is not positive definite."""


class ConfigError(UwbrelError):
    """An experiment configuration is inconsistent or incomplete."""
