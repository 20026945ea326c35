"""Regularity audit: certify the constants a tunnel must satisfy.

The navigation analysis assumes a handful of uniform constants: a gap
between the meridian normal curvature and the minimal principal curvature,
a margin keeping normal offsets invertible, Lipschitz constants for the
normal and principal fields, and bounds on the basis-projection gradient.
``regularity_audit`` estimates all of them on a chart grid and flags (never
raises) when a surface fails the requirements.

Lipschitz constants are estimated as maximal difference quotients between
grid neighbors and then inflated by a safety factor; before inflation they
are lower bounds of the true constants, so the grid resolution and factor
are explicit knobs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields as dc_fields
from typing import Optional

import numpy as np

from .frames import frame_fields
from .tunnels import ParametricTunnel

UMBILIC_TOL = 1e-8


@dataclass(frozen=True)
class OperationalZone:
    """Clearance band of the robot: 0 < d_minus < d_star < d_plus."""

    d_minus: float
    d_plus: float
    d_star: float
    delta_s: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.d_minus < self.d_star < self.d_plus:
            raise ValueError(
                "operational zone requires 0 < d_minus < d_star < d_plus, got "
                f"({self.d_minus}, {self.d_star}, {self.d_plus})"
            )
        if self.delta_s < 0.0:
            raise ValueError("delta_s must be nonnegative")


@dataclass
class TunnelConstants:
    """Audited regularity certificate of a tunnel.

    All entries are nonnegative reals in the length/angle units of the
    chart.  ``l_tau`` is the Lipschitz bound of the offset meridian field;
    it needs the offset-surface machinery and is filled in separately (NaN
    until then).
    """

    delta_tau: float
    delta_kappa: float
    theta_min: float
    l_n: float
    l_kappa: float
    l_e: float
    l_b: float
    delta_b_minus: float
    delta_b_plus: float
    l_tau: float
    d_minus: float
    d_plus: float
    d_star: float
    delta_s: float
    eta: float
    safety_factor: float
    grid: int
    passed: bool = True
    failures: list = field(default_factory=list)

    def lines(self) -> list[str]:
        """Flat ``name = value`` report for machine diffing."""
        out = []
        for f in dc_fields(self):
            val = getattr(self, f.name)
            if f.name == "failures":
                out.append(f"failures = {';'.join(val) if val else 'none'}")
            elif isinstance(val, bool):
                out.append(f"{f.name} = {str(val).lower()}")
            elif isinstance(val, (int, np.integer)):
                out.append(f"{f.name} = {val}")
            else:
                out.append(f"{f.name} = {format(float(val), '.17g')}")
        return out

    @property
    def zone(self) -> OperationalZone:
        return OperationalZone(self.d_minus, self.d_plus, self.d_star, self.delta_s)

    def principal_angle_floor(self) -> float:
        """Lower bound for the angle between the flat principal line and
        the meridian, arcsin(sqrt(delta_tau / (2 l_n)))."""
        arg = min(1.0, self.delta_tau / (2.0 * self.l_n))
        return math.asin(math.sqrt(max(arg, 0.0)))


def _neighbor_quotients(values, points, axis, periodic, vector_gap=False, signed_field=False):
    """Max |Delta values| / |Delta points| between neighbors along an axis."""
    if periodic:
        dv = np.roll(values, -1, axis=axis) - values
        dp = np.roll(points, -1, axis=axis) - points
    else:
        sl_hi = [slice(None)] * points.ndim
        sl_lo = [slice(None)] * points.ndim
        sl_hi[axis] = slice(1, None)
        sl_lo[axis] = slice(None, -1)
        dv = values[tuple(sl_hi[: values.ndim])] - values[tuple(sl_lo[: values.ndim])]
        dp = points[tuple(sl_hi)] - points[tuple(sl_lo)]
    dist = np.linalg.norm(dp, axis=-1)
    if signed_field:
        # fields defined up to sign: fold the shorter of the two differences
        if periodic:
            other = np.roll(values, -1, axis=axis) + values
        else:
            other = values[tuple(sl_hi[: values.ndim])] + values[tuple(sl_lo[: values.ndim])]
        num = np.minimum(np.linalg.norm(dv, axis=-1), np.linalg.norm(other, axis=-1))
    elif values.ndim == points.ndim:
        num = np.linalg.norm(dv, axis=-1)
    else:
        num = np.abs(dv)
    return float(np.max(num / np.maximum(dist, 1e-300)))


def regularity_audit(
    tunnel: ParametricTunnel,
    grid: int = 64,
    d_plus: float = 0.4,
    zone: Optional[OperationalZone] = None,
    safety_factor: float = 1.25,
) -> TunnelConstants:
    """Estimate the regularity constants of a tunnel on a chart grid.

    Failures (non-positive curvature gaps, umbilic points) are recorded in
    the returned certificate instead of raised, so a command-line audit can
    print the full report for an invalid surface.
    """
    if grid < 2:
        raise ValueError("audit grid needs at least 2 samples per axis")
    if zone is None:
        zone = OperationalZone(d_plus / 4.0, d_plus, d_plus / 2.0, 0.0)
    elif abs(zone.d_plus - d_plus) > 1e-12:
        raise ValueError("zone.d_plus disagrees with the d_plus argument")

    U, V = tunnel.grid(grid, grid)
    f = frame_fields(tunnel, U, V)

    failures = []
    gap = f["kappa_gap"]
    if float(np.min(gap)) < UMBILIC_TOL:
        i = np.unravel_index(int(np.argmin(gap)), gap.shape)
        failures.append(
            f"umbilic point at (u, v) = ({U[i]:.6g}, {V[i]:.6g}): "
            "principal directions undefined"
        )

    delta_tau = float(np.min(f["tau_tau"] - f["kappa_minus"]))
    if delta_tau <= 0.0:
        i = np.unravel_index(int(np.argmin(f["tau_tau"] - f["kappa_minus"])), gap.shape)
        failures.append(
            f"meridian curvature gap non-positive at (u, v) = ({U[i]:.6g}, {V[i]:.6g})"
        )

    delta_kappa = float(np.min(1.0 - d_plus * f["kappa_plus"]))
    if delta_kappa <= 0.0:
        i = np.unravel_index(int(np.argmin(1.0 - d_plus * f["kappa_plus"])), gap.shape)
        failures.append(
            f"offset margin 1 - d_plus*kappa_plus non-positive at "
            f"(u, v) = ({U[i]:.6g}, {V[i]:.6g})"
        )

    cos_theta = np.abs(np.einsum("...i,...i->...", f["E_minus"], f["tau"]))
    theta_min = float(np.min(np.arccos(np.clip(cos_theta, -1.0, 1.0))))

    pts = f["point"]
    l_n = l_kappa = l_e = l_b = 0.0
    axes = [(0, tunnel.periodic_u), (1, tunnel.periodic_v)]
    for axis, periodic in axes:
        l_n = max(l_n, _neighbor_quotients(f["N"], pts, axis, periodic))
        for key in ("kappa_minus", "kappa_plus"):
            l_kappa = max(l_kappa, _neighbor_quotients(f[key], pts, axis, periodic))
        for key in ("E_minus", "E_plus"):
            l_e = max(l_e, _neighbor_quotients(f[key], pts, axis, periodic, signed_field=True))
        l_b = max(l_b, _neighbor_quotients(f["grad_B"], pts, axis, periodic))
    l_n *= safety_factor
    l_kappa *= safety_factor
    l_e *= safety_factor
    l_b *= safety_factor

    gnorm = f["grad_B_norm"]
    delta_b_minus = float(np.min(gnorm))
    delta_b_plus = float(np.max(gnorm))
    if delta_b_minus <= 0.0:
        failures.append("basis projection gradient vanishes on the grid")

    eta = 0.5 * min(1.0 / l_n if l_n > 0 else np.inf, tunnel.feature_size())

    return TunnelConstants(
        delta_tau=delta_tau,
        delta_kappa=delta_kappa,
        theta_min=theta_min,
        l_n=l_n,
        l_kappa=l_kappa,
        l_e=l_e,
        l_b=l_b,
        delta_b_minus=delta_b_minus,
        delta_b_plus=delta_b_plus,
        l_tau=float("nan"),
        d_minus=zone.d_minus,
        d_plus=zone.d_plus,
        d_star=zone.d_star,
        delta_s=zone.delta_s,
        eta=eta,
        safety_factor=safety_factor,
        grid=grid,
        passed=not failures,
        failures=failures,
    )


def default_patch_radius(tunnel: ParametricTunnel, grid: int = 33) -> float:
    """Patch disc radius used by the sensor when none is configured.

    Cached on the tunnel instance; the value is immutable afterwards.
    """
    cached = getattr(tunnel, "_default_patch_radius", None)
    if cached is not None:
        return cached
    U, V = tunnel.grid(grid, grid)
    f = frame_fields(tunnel, U, V)
    pts = f["point"]
    l_n = 0.0
    for axis, periodic in ((0, tunnel.periodic_u), (1, tunnel.periodic_v)):
        l_n = max(l_n, _neighbor_quotients(f["N"], pts, axis, periodic))
    l_n *= 1.25
    eta = 0.5 * min(1.0 / l_n if l_n > 0 else np.inf, tunnel.feature_size())
    setattr(tunnel, "_default_patch_radius", eta)
    return eta
