"""Direction estimation from cone-scan distance profiles.

The estimator locates the local maxima of the periodic distance profile
d(alpha_e, phi), folds each maximum angle into (-pi/2, pi/2] modulo pi,
averages them, and returns the line through the foot point at that angle in
the plane normal to the wall direction.  On a regular tunnel with a small
enough cone angle the profile has exactly two maxima (near phi = 0 and
phi = pi) and the returned line approaches the flattest principal
direction, which is what makes it a usable travel direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .audit import OperationalZone, TunnelConstants
from .errors import (
    ActiveZoneViolation,
    EmptyProfile,
    ProjectionOnBoundary,
    TunnelNavError,
    WellPosednessViolation,
)
from .projection import ProjectionResult
from .sensor import RayScan, SensorConfig, scan
from .tunnels import ParametricTunnel

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class DirectionEstimate:
    """Output of one estimation: maxima angles, their mean, and the line."""

    maxima_phis: np.ndarray   # refined maxima in [0, 2 pi)
    phi_star: float           # folded mean angle in (-pi/2, pi/2]
    line_dir: np.ndarray      # unit vector of the line (defined up to sign)
    well_posed: bool          # exactly two maxima found
    foot: ProjectionResult
    wrap_flagged: bool = False  # folded maxima spread suspiciously wide


@dataclass(frozen=True)
class ExactnessReport:
    """Angle between the estimated line and the flat principal line."""

    angle: float              # in [0, pi/2]
    alpha_e: float
    useful: Optional[bool] = None  # below the audited meridian-angle floor


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    max_exactness: float
    wellposed_rate: float
    n_points: int
    failures: tuple = ()


def wrap_half_open(phi: float) -> float:
    """Shift an angle into (-pi/2, pi/2] by an integer multiple of pi."""
    out = math.remainder(phi, math.pi)
    if out <= -math.pi / 2.0:
        out += math.pi
    elif out > math.pi / 2.0:  # remainder returns (-pi/2, pi/2] boundary at +-pi/2
        out -= math.pi
    return out


def _circular_midpoint(a: float, b: float) -> float:
    """Midpoint of the short arc from a to b on the circle."""
    diff = math.remainder(b - a, TWO_PI)
    return (a + 0.5 * diff) % TWO_PI


def _refine_parabolic(f, x0: float, h: float, tol: float, max_rounds: int = 14) -> float:
    """Successive symmetric three-point parabolic refinement of a maximum."""
    fx = f(x0)
    for _ in range(max_rounds):
        if h <= tol:
            break
        fm = f(x0 - h)
        fp = f(x0 + h)
        if not (np.isfinite(fm) and np.isfinite(fp) and np.isfinite(fx)):
            h *= 0.25
            continue
        denom = fp - 2.0 * fx + fm
        if denom >= -1e-300:
            h *= 0.25
            continue
        delta = -0.5 * h * (fp - fm) / denom
        delta = min(max(delta, -h), h)
        x0 = x0 + delta
        fx = f(x0)
        h *= 0.25
    return x0


def find_local_maxima(ray_scan: RayScan) -> list[float]:
    """Refined angles of the strict local maxima of the distance profile.

    Missing samples are excluded; plateau runs flat within the ray
    tolerance collapse to their midpoint.  When the config allows it, each
    grid maximum is polished by casting fresh rays; otherwise a single
    parabola through the three neighboring samples is used.
    """
    d = ray_scan.distances
    phis = ray_scan.phis
    valid = np.isfinite(d)
    if not valid.any():
        raise EmptyProfile("all scan samples are missing")
    vidx = np.nonzero(valid)[0]
    vals = d[vidx]
    m = len(vidx)
    if m < 3:
        raise EmptyProfile("fewer than three valid samples in the profile")
    plateau_tol = ray_scan.cfg.root_tol

    # rotate so index 0 starts a plateau run; then no run spans the seam
    circ_diff = np.abs(vals[(np.arange(m) + 1) % m] - vals)
    breaks = np.nonzero(circ_diff > plateau_tol)[0]
    if len(breaks) == 0:
        return []  # profile flat within tolerance: no strict maxima
    order = (np.arange(m) + (breaks[-1] + 1) % m) % m
    rv = vals[order]
    rphi = phis[vidx[order]]

    candidates = []  # (start, end) inclusive run indices into the rotated arrays
    i = 0
    while i < m:
        j = i
        while j + 1 < m and abs(rv[j + 1] - rv[i]) <= plateau_tol:
            j += 1
        prev_val = rv[(i - 1) % m]
        next_val = rv[(j + 1) % m]
        if rv[i] > prev_val + plateau_tol and rv[i] > next_val + plateau_tol:
            candidates.append((i, j))
        i = j + 1

    grid_step = TWO_PI / len(phis)
    maxima = []
    for s, e in candidates:
        phi0 = rphi[s] if s == e else _circular_midpoint(rphi[s], rphi[e])
        if ray_scan.cfg.refine_with_rays:
            def f(x):
                return float(ray_scan.ray_at(x)[0])
            phi = _refine_parabolic(f, phi0, grid_step, ray_scan.cfg.refine_tol)
        elif s == e:
            f0, f1, f2 = rv[(s - 1) % m], rv[s], rv[(s + 1) % m]
            denom = f2 - 2.0 * f1 + f0
            phi = phi0 - 0.5 * grid_step * (f2 - f0) / denom if denom < -1e-300 else phi0
        else:
            phi = phi0
        maxima.append(phi % TWO_PI)
    maxima.sort()
    return maxima


def _check_active_zone(
    foot: ProjectionResult, tunnel: ParametricTunnel, zone: Optional[OperationalZone]
):
    if zone is None:
        return
    if not zone.d_minus < foot.distance < zone.d_plus:
        raise ActiveZoneViolation(
            f"clearance {foot.distance:.4g} outside ({zone.d_minus:g}, {zone.d_plus:g})"
        )


def mdpbe(
    tunnel: ParametricTunnel,
    r,
    cfg: SensorConfig,
    zone: Optional[OperationalZone] = None,
) -> DirectionEstimate:
    """Most-distant-point direction estimate at position r.

    Scans the cone at the estimator angle, folds the scan maxima into
    (-pi/2, pi/2], and averages.  With strict well-posedness (the default)
    any count other than two maxima raises; in lenient mode the mean of
    whatever was found is returned with ``well_posed=False``.
    """
    try:
        sc = scan(tunnel, r, cfg.alpha_e, cfg)
    except ProjectionOnBoundary as exc:
        raise ActiveZoneViolation(f"foot within the edge margin: {exc}") from exc
    _check_active_zone(sc.center, tunnel, zone)
    if zone is not None and zone.delta_s > 0 and tunnel.basis_type == "interval":
        # re-run the boundary test with the zone margin
        from .projection import _boundary_points

        bpts = _boundary_points(tunnel)
        if bpts is not None:
            edge = float(np.min(np.linalg.norm(bpts - sc.center.foot_point, axis=-1)))
            if edge < zone.delta_s:
                raise ActiveZoneViolation(
                    f"foot is {edge:.4g} from the edge (margin {zone.delta_s:g})"
                )

    maxima = find_local_maxima(sc)
    well_posed = len(maxima) == 2
    if not well_posed and cfg.strict_wellposed:
        raise WellPosednessViolation(
            f"expected two profile maxima, found {len(maxima)} at alpha={cfg.alpha_e:g}"
        )
    folded = [wrap_half_open(p) for p in maxima]
    spread = max(folded) - min(folded) if folded else 0.0
    phi_star = wrap_half_open(float(np.mean(folded)))
    line_dir = math.cos(phi_star) * sc.frame.E_minus + math.sin(phi_star) * sc.frame.E_plus
    return DirectionEstimate(
        maxima_phis=np.asarray(maxima),
        phi_star=phi_star,
        line_dir=line_dir,
        well_posed=well_posed,
        foot=sc.center,
        wrap_flagged=spread > math.pi / 2.0,
    )


def exactness(
    tunnel: ParametricTunnel,
    r,
    est: DirectionEstimate,
    constants: Optional[TunnelConstants] = None,
    alpha_e: Optional[float] = None,
) -> ExactnessReport:
    """Angle between the estimated line and the flat principal line at the foot."""
    from .frames import surface_frame

    frame = surface_frame(tunnel, est.foot.foot_uv)
    c = abs(float(np.dot(est.line_dir, frame.E_minus)))
    angle = math.acos(min(1.0, max(-1.0, c)))
    useful = None
    if constants is not None:
        useful = angle < constants.principal_angle_floor()
    return ExactnessReport(angle=angle, alpha_e=alpha_e if alpha_e is not None else -1.0, useful=useful)


def alpha_sweep(
    tunnel: ParametricTunnel,
    sample_points,
    alphas: Sequence[float],
    cfg: SensorConfig,
    zone: Optional[OperationalZone] = None,
    constants: Optional[TunnelConstants] = None,
) -> list[SweepRow]:
    """Max estimation error over sample points, per cone angle.

    Per-point failures are collected into the row instead of aborting the
    sweep, so a single bad sample never hides the rest of the table.
    """
    sample_points = np.atleast_2d(np.asarray(sample_points, dtype=float))
    rows = []
    for alpha in alphas:
        acfg = cfg.with_alpha(float(alpha))
        worst = 0.0
        posed = 0
        count = 0
        failures = []
        for p in sample_points:
            try:
                est = mdpbe(tunnel, p, acfg, zone=zone)
            except TunnelNavError as exc:
                failures.append(f"{tuple(round(float(x), 4) for x in p)}: {exc}")
                continue
            rep = exactness(tunnel, p, est, constants, alpha_e=float(alpha))
            worst = max(worst, rep.angle)
            posed += int(est.well_posed)
            count += 1
        rows.append(
            SweepRow(
                alpha=float(alpha),
                max_exactness=worst if count else float("nan"),
                wellposed_rate=posed / count if count else 0.0,
                n_points=count,
                failures=tuple(failures),
            )
        )
    return rows
