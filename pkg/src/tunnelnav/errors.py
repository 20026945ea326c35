"""Exception types shared across the package.

Numerical audits report failures as data; exceptions are reserved for
contract violations at individual query points.
"""


class TunnelNavError(Exception):
    """Base class for all package-specific errors."""


class DegenerateChart(TunnelNavError):
    """Tangent basis is rank-deficient at the queried chart point."""


class UmbilicPoint(TunnelNavError):
    """Principal curvatures coincide; principal directions are undefined."""


class NotTangent(TunnelNavError):
    """A vector expected in the tangent plane has a normal component."""


class CollinearInput(TunnelNavError):
    """Angle ratio is undefined for (near-)collinear input vectors."""


class DegenerateProjection(TunnelNavError):
    """The basis projection gradient vanishes at the queried point."""


class NonUniqueProjection(TunnelNavError):
    """Two projection basins are within tolerance of each other."""


class ProjectionOnBoundary(TunnelNavError):
    """The nearest surface point lies within the stop margin of the edge."""

    def __init__(self, msg, foot_uv=None, distance=None):
        super().__init__(msg)
        self.foot_uv = foot_uv
        self.distance = distance


class OffsetOutOfRange(TunnelNavError):
    """Normal offset depth outside the certified range."""


class StepUnderflow(TunnelNavError):
    """Requested finite-difference step is below the supported floor."""


class VanishingField(TunnelNavError):
    """A vector field required to be non-vanishing is numerically zero."""


class NoHit(TunnelNavError):
    """A cast ray found no surface crossing within the sensing range."""


class ScanRejected(TunnelNavError):
    """Too many rays of a cone scan missed the surface."""


class PatchEscape(TunnelNavError):
    """No surface height found inside the patch slab over a tangent point."""


class EmptyProfile(TunnelNavError):
    """All samples of a scan profile are missing."""


class WellPosednessViolation(TunnelNavError):
    """The distance profile did not have exactly two local maxima."""


class ActiveZoneViolation(TunnelNavError):
    """Query point is outside the active operational zone."""


class EstimatorFailure(TunnelNavError):
    """Direction estimation failed inside the control loop."""


class SurfaceContact(TunnelNavError):
    """The simulated robot reached or crossed the tunnel wall."""


class ScenarioError(TunnelNavError):
    """Scenario file failed to parse or validate."""
