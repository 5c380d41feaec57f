"""Exception types raised across the package."""


class SphereOtError(Exception):
    """Base class for all package errors."""


class PointOutsideChart(SphereOtError):
    """The point is not strictly inside the chart's open hemisphere."""


class ChartDegeneracy(SphereOtError):
    """A point is too close to its chart equator for stable derivatives."""


class GradientTooLarge(SphereOtError):
    """A covector exceeds the unit bound required to invert the cost map."""


class SingularCrossDifference(SphereOtError):
    """The mixed second-derivative matrix of the cost is not invertible."""


class DimensionTooSmall(SphereOtError):
    """The requested dimension is below the valid range."""


class SizeCap(SphereOtError):
    """A discrete problem exceeds the configured size cap."""


class InfeasibleWeights(SphereOtError):
    """Source and target masses do not balance."""


class NotAMap(SphereOtError):
    """A coupling splits mass and cannot be read as a transport map."""


class NonConvergence(SphereOtError):
    """An iterative method failed to reach its tolerance."""


class NotCConvex(SphereOtError):
    """Operation requires a c-convex potential."""


class NotAdmissible(SphereOtError):
    """The candidate Hessian matrix field is not positive definite."""


class LinearSolveFailure(SphereOtError):
    """The linearized system could not be solved."""


class LineSearchFailure(SphereOtError):
    """Backtracking failed to find a residual-decreasing step."""


class AdmissibilityLost(SphereOtError):
    """A Newton update left the elliptic admissibility region."""


class ContinuationStall(SphereOtError):
    """The continuation parameter step shrank below its floor."""


class DisplacementTooLarge(SphereOtError):
    """Monotone rearrangement is not valid for displacements this large."""
