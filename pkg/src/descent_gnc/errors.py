"""Exception hierarchy shared by all simulator modules."""


class DescentError(Exception):
    """Base class for simulator failures."""


class SingularKinematics(DescentError):
    """Euler-rate matrix is singular or the pitch angle is inside the gimbal guard band."""


class DomainError(DescentError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class GravityDomainError(DomainError):
    """Gravity evaluated where the chosen model is not valid."""


class DegenerateProjection(DescentError):
    """A feature lies (numerically) in the camera's focal plane."""


class NoVisibleFeature(DescentError):
    """No feature point is in front of the camera."""


class SingularInnovation(DescentError):
    """Innovation covariance too ill-conditioned to invert."""


class NotStabilizable(DescentError):
    """No strictly Schur closed loop could be synthesized."""


class RankDeficientB(DescentError):
    """Input matrix has dependent columns; equilibrium control undefined."""


class GimbalLock(DescentError):
    """Rotation matrix too close to the 321 Euler singularity."""


class GimbalProximity(GimbalLock):
    """Attitude reference extraction landed inside the gimbal guard band."""


class ScenarioError(DescentError, ValueError):
    """Scenario file fails validation."""
