"""Cone-range virtual sensor: ray casting, scan profiles, patch heights.

The sensor measures the distance to the tunnel wall along rays emitted
within a cone around the direction to the nearest wall point.  A ray aimed
at tangential angle phi passes through ``c + d tan(alpha) e(phi)`` where c
is the foot point, d the clearance and ``e(phi)`` the unit tangent at angle
phi from the flat principal direction.  Measured distances decompose as

    d(alpha, phi) = (d + x sin^2 alpha) / cos(alpha)

and the scaled depth x is the quantity whose maxima the direction estimator
locates; as the cone narrows, x(phi) converges to the closed-form quadratic
limit determined by the principal curvatures.

Ray distances come from fixed-step marching on an interior indicator
refined by bisection.  Built-in surface kinds supply an implicit indicator;
a projection-based indicator (sign of the offset along the local normal)
covers every kind and can be forced through the config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .audit import default_patch_radius
from .errors import NoHit, PatchEscape, ScanRejected
from .frames import ShapeFrame, frame_fields, surface_frame
from .projection import ProjectionResult, _newton_refine, project
from .tunnels import ParametricTunnel


@dataclass(frozen=True)
class SensorConfig:
    """Cone sensor parameters.

    alpha_s is the physical cone half-angle, alpha_e the (smaller) angle the
    estimator actually uses.  ``patch_radius_eta`` defaults to half the
    smaller of the inverse normal-Lipschitz bound and the tunnel feature
    size.  ``refine_with_rays`` controls whether maxima refinement casts new
    rays (accurate) or interpolates grid samples only (cheap, for the
    closed-loop simulation).
    """

    alpha_s: float = 0.45
    alpha_e: float = 0.1
    n_phi: int = 256
    max_range: float = 4.0
    ray_march_step: float = 0.01
    root_tol: float = 1e-12
    patch_radius_eta: Optional[float] = None
    refine_with_rays: bool = True
    refine_tol: float = 1e-8
    strict_wellposed: bool = True
    max_missing: float = 0.1
    indicator: str = "auto"  # "auto" (implicit when available) | "projection"
    projection_grid: int = 64

    def __post_init__(self):
        if not 0.0 < self.alpha_e <= self.alpha_s < math.pi / 2.0:
            raise ValueError("need 0 < alpha_e <= alpha_s < pi/2")
        if self.n_phi < 16:
            raise ValueError("n_phi must be at least 16")
        for name in ("max_range", "ray_march_step", "root_tol", "refine_tol"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.patch_radius_eta is not None and self.patch_radius_eta <= 0.0:
            raise ValueError("patch_radius_eta must be positive when given")
        if not 0.0 <= self.max_missing < 1.0:
            raise ValueError("max_missing must lie in [0, 1)")
        if self.indicator not in ("auto", "projection"):
            raise ValueError("indicator must be 'auto' or 'projection'")

    def with_alpha(self, alpha: float) -> "SensorConfig":
        return replace(self, alpha_e=alpha, alpha_s=max(self.alpha_s, alpha))


def resolve_eta(tunnel: ParametricTunnel, cfg: Optional[SensorConfig]) -> float:
    if cfg is not None and cfg.patch_radius_eta is not None:
        return cfg.patch_radius_eta
    return default_patch_radius(tunnel)


@dataclass(frozen=True)
class RayScan:
    """One cone sweep: distances d(alpha, phi) on a uniform phi grid.

    ``distances`` holds NaN for rays that found no wall crossing; the scan
    is rejected upstream when too many are missing.
    """

    tunnel: ParametricTunnel
    origin: np.ndarray
    alpha: float
    phis: np.ndarray
    distances: np.ndarray
    center: ProjectionResult
    frame: ShapeFrame
    cfg: SensorConfig

    @property
    def clearance(self) -> float:
        return self.center.distance

    def tangent_dir(self, phi):
        phi = np.asarray(phi, dtype=float)
        return (
            np.cos(phi)[..., None] * self.frame.E_minus
            + np.sin(phi)[..., None] * self.frame.E_plus
        )

    def ray_dirs(self, phi):
        d_hat = self.center.direction
        return math.cos(self.alpha) * d_hat + math.sin(self.alpha) * self.tangent_dir(phi)

    def ray_at(self, phi) -> np.ndarray:
        """Cast fresh rays at arbitrary tangential angles (NaN on miss)."""
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        dirs = self.ray_dirs(phi)
        return ray_distances(
            self.tunnel,
            self.origin,
            dirs,
            self.cfg,
            t_start=self.clearance * (1.0 - 1e-9),
            warm_uv=self.center.foot_uv,
        )

    def hit_points(self) -> np.ndarray:
        return self.origin + self.distances[:, None] * self.ray_dirs(self.phis)

    def patch_flags(self, eta: Optional[float] = None) -> np.ndarray:
        """True where the ray landed inside the certified patch disc."""
        if eta is None:
            eta = resolve_eta(self.tunnel, self.cfg)
        x = scaled_depth_profile(self)
        rho = np.abs(self.clearance + x * math.sin(self.alpha) ** 2) * math.tan(self.alpha)
        return rho <= eta


class _ImplicitIndicator:
    def __init__(self, tunnel):
        self.tunnel = tunnel

    def __call__(self, pts, idx=None):
        return self.tunnel.implicit(pts)


class _ProjectionIndicator:
    """Sign of the normal offset to the warm-tracked nearest wall point."""

    def __init__(self, tunnel, n_rays, warm_uv):
        self.tunnel = tunnel
        self.u = np.full(n_rays, float(warm_uv[0]))
        self.v = np.full(n_rays, float(warm_uv[1]))

    def __call__(self, pts, idx=None):
        if idx is None:
            idx = np.arange(len(self.u))
        u, v, _ = _newton_refine(self.tunnel, pts, self.u[idx], self.v[idx], max_iter=4)
        self.u[idx] = u
        self.v[idx] = v
        f = frame_fields(self.tunnel, u, v)
        return np.einsum("...i,...i->...", pts - f["point"], f["N"])


def _make_indicator(tunnel, cfg, n_rays, warm_uv):
    if cfg.indicator == "auto" and tunnel.implicit(np.zeros(3)) is not None:
        return _ImplicitIndicator(tunnel)
    if warm_uv is None:
        mid = (
            0.5 * (tunnel.u_range[0] + tunnel.u_range[1]),
            0.5 * (tunnel.v_range[0] + tunnel.v_range[1]),
        )
        warm_uv = mid
    return _ProjectionIndicator(tunnel, n_rays, warm_uv)


def _validate_hits(tunnel, pts, warm_uv, tol=1e-7):
    """True where a candidate hit lies on the chart (not past an open end)."""
    n = len(pts)
    u0 = np.full(n, float(warm_uv[0]))
    v0 = np.full(n, float(warm_uv[1]))
    u, v, f2 = _newton_refine(tunnel, pts, u0, v0, max_iter=25)
    return np.sqrt(f2) <= tol


def ray_distances(
    tunnel: ParametricTunnel,
    origin,
    dirs,
    cfg: SensorConfig,
    t_start: float = 0.0,
    warm_uv=None,
) -> np.ndarray:
    """First-hit parameters for a batch of unit rays from a common origin.

    Marches at a fixed stride on the interior indicator sign and refines
    each bracketed crossing by bisection to ``root_tol``.  Entries are NaN
    where no crossing exists within ``max_range`` or where the crossing
    falls beyond the open ends of the chart.
    """
    origin = np.asarray(origin, dtype=float).reshape(3)
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    n = len(dirs)
    indicator = _make_indicator(tunnel, cfg, n, warm_uv)
    check_ends = tunnel.basis_type == "interval"

    result = np.full(n, np.nan)
    t_cur = np.full(n, max(t_start, 0.0))
    searching = np.ones(n, dtype=bool)
    start_val = indicator(origin + t_cur[:, None] * dirs, np.arange(n))
    if np.any(start_val <= 0):
        raise ValueError("ray origin is not strictly inside the tunnel")

    for _attempt in range(6):
        if not searching.any():
            break
        lo = np.full(n, np.nan)
        hi = np.full(n, np.nan)
        active = searching.copy()
        while active.any():
            idx = np.nonzero(active)[0]
            t_next = t_cur[idx] + cfg.ray_march_step
            vals = indicator(origin + t_next[:, None] * dirs[idx], idx)
            crossed = vals <= 0.0
            lo[idx[crossed]] = t_cur[idx[crossed]]
            hi[idx[crossed]] = t_next[crossed]
            t_cur[idx] = t_next
            active[idx[crossed]] = False
            exceeded = t_next > cfg.max_range
            active[idx[exceeded & ~crossed]] = False

        bracketed = np.isfinite(hi) & searching
        searching = searching & ~bracketed  # unbracketed rays stay NaN
        if not bracketed.any():
            break
        idx = np.nonzero(bracketed)[0]
        a = lo[idx].copy()
        b = hi[idx].copy()
        for _ in range(80):
            if np.max(b - a) <= cfg.root_tol:
                break
            m = 0.5 * (a + b)
            vals = indicator(origin + m[:, None] * dirs[idx], idx)
            neg = vals <= 0.0
            b = np.where(neg, m, b)
            a = np.where(neg, a, m)
        t_hit = 0.5 * (a + b)

        if check_ends:
            pts = origin + t_hit[:, None] * dirs[idx]
            wuv = warm_uv if warm_uv is not None else (
                0.5 * (tunnel.u_range[0] + tunnel.u_range[1]),
                0.5 * (tunnel.v_range[0] + tunnel.v_range[1]),
            )
            ok = _validate_hits(tunnel, pts, wuv)
        else:
            ok = np.ones(len(idx), dtype=bool)

        result[idx[ok]] = t_hit[ok]
        # invalid crossings (past an open end): resume the march beyond them
        bad = idx[~ok]
        t_cur[bad] = b[~ok] + cfg.ray_march_step * 1e-3
        searching[bad] = True
        searching[idx[ok]] = False

    return result


def ray_distance(tunnel: ParametricTunnel, origin, direction, cfg: SensorConfig) -> float:
    """Distance to the wall along one ray; raises NoHit on a miss."""
    direction = np.asarray(direction, dtype=float).reshape(3)
    direction = direction / np.linalg.norm(direction)
    res = project(tunnel, origin, grid=cfg.projection_grid)
    t = ray_distances(
        tunnel,
        origin,
        direction[None, :],
        cfg,
        t_start=res.distance * (1.0 - 1e-9),
        warm_uv=res.foot_uv,
    )[0]
    if not np.isfinite(t):
        raise NoHit(f"no wall crossing within range {cfg.max_range:g}")
    return float(t)


def scan(tunnel: ParametricTunnel, r, alpha: float, cfg: SensorConfig) -> RayScan:
    """Sweep the sensing cone at angle alpha around the wall direction."""
    if not 0.0 < alpha <= cfg.alpha_s:
        raise ValueError(f"alpha {alpha:g} outside (0, alpha_s={cfg.alpha_s:g}]")
    r = np.asarray(r, dtype=float).reshape(3)
    center = project(tunnel, r, grid=cfg.projection_grid)
    frame = surface_frame(tunnel, center.foot_uv)
    phis = np.linspace(0.0, 2.0 * math.pi, cfg.n_phi, endpoint=False)
    e = np.cos(phis)[:, None] * frame.E_minus + np.sin(phis)[:, None] * frame.E_plus
    dirs = math.cos(alpha) * center.direction + math.sin(alpha) * e
    dist = ray_distances(
        tunnel,
        r,
        dirs,
        cfg,
        t_start=center.distance * (1.0 - 1e-9),
        warm_uv=center.foot_uv,
    )
    missing = float(np.mean(~np.isfinite(dist)))
    if missing > cfg.max_missing:
        raise ScanRejected(
            f"{missing:.0%} of rays missed the wall (limit {cfg.max_missing:.0%})"
        )
    return RayScan(
        tunnel=tunnel,
        origin=r,
        alpha=float(alpha),
        phis=phis,
        distances=dist,
        center=center,
        frame=frame,
        cfg=cfg,
    )


def scaled_depth_profile(ray_scan: RayScan) -> np.ndarray:
    """Scaled depths x(phi) = (d(alpha, phi) cos(alpha) - d) / sin^2(alpha)."""
    a = ray_scan.alpha
    return (ray_scan.distances * math.cos(a) - ray_scan.clearance) / math.sin(a) ** 2


def limit_depth(frame: ShapeFrame, d: float, phi) -> np.ndarray:
    """Small-angle limit of the scaled depth, a pure curvature quadratic."""
    phi = np.asarray(phi, dtype=float)
    ii = frame.kappa_minus * np.cos(phi) ** 2 + frame.kappa_plus * np.sin(phi) ** 2
    return -0.5 * d * d * ii


def patch_heights(tunnel: ParametricTunnel, frame: ShapeFrame, pts, eta: float) -> np.ndarray:
    """Heights g of the wall graph over tangent-plane points (batch).

    Solves chart(u, v) = p + g N(c) by a 3x3 Newton iteration warm-started
    at the patch center.  Raises PatchEscape when any query fails to settle
    inside the slab |g| <= eta.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n = len(pts)
    u = np.full(n, frame.uv[0])
    v = np.full(n, frame.uv[1])
    g = np.zeros(n)
    N = frame.N
    converged = np.zeros(n, dtype=bool)
    for _ in range(60):
        d = tunnel.chart_derivs(u, v)
        res = d.r - g[:, None] * N - pts
        rnorm = np.linalg.norm(res, axis=-1)
        converged = rnorm < 1e-12
        if converged.all():
            break
        J = np.stack([d.ru, d.rv, -np.broadcast_to(N, d.ru.shape)], axis=-1)
        try:
            step = np.linalg.solve(J, res[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise PatchEscape(f"degenerate patch system: {exc}") from exc
        u = u - step[:, 0]
        v = v - step[:, 1]
        g = g - step[:, 2]
    if not converged.all():
        raise PatchEscape("patch height iteration did not converge")
    if np.any(np.abs(g) > eta):
        raise PatchEscape(
            f"patch height {np.max(np.abs(g)):.4g} escapes the slab |g| <= {eta:g}"
        )
    return g


def patch_height(
    tunnel: ParametricTunnel,
    c_uv,
    p,
    cfg: Optional[SensorConfig] = None,
    eta: Optional[float] = None,
    frame: Optional[ShapeFrame] = None,
) -> float:
    """Height of the wall graph over one tangent-plane point."""
    if frame is None:
        frame = surface_frame(tunnel, c_uv)
    if eta is None:
        eta = resolve_eta(tunnel, cfg)
    p = np.asarray(p, dtype=float).reshape(3)
    rel = p - frame.point
    rho = np.linalg.norm(rel)
    if rho > eta * (1.0 + 1e-9):
        raise ValueError(f"query point at radius {rho:.4g} outside the patch disc {eta:g}")
    if rho > 0 and abs(float(rel @ frame.N)) > 1e-9 * (1.0 + rho):
        raise ValueError("query point is not in the tangent plane of the patch center")
    return float(patch_heights(tunnel, frame, p[None, :], eta)[0])


def quadratic_remainder(
    tunnel: ParametricTunnel,
    c_uv,
    p,
    cfg: Optional[SensorConfig] = None,
    eta: Optional[float] = None,
    frame: Optional[ShapeFrame] = None,
) -> float:
    """Deviation of the patch height from its curvature quadratic."""
    if frame is None:
        frame = surface_frame(tunnel, c_uv)
    g = patch_height(tunnel, c_uv, p, cfg, eta, frame=frame)
    rel = np.asarray(p, dtype=float) - frame.point
    a = frame.tangent_coords(rel)
    return g - 0.5 * float(a @ frame.shape_op @ a)


def depth_interval(d: float, alpha: float, eta: float) -> tuple[float, float]:
    """Admissible scaled-depth interval for rays landing inside the patch."""
    s, c = math.sin(alpha), math.cos(alpha)
    half = eta * c / s**3
    center = -d / s**2
    return center - half, center + half


def solve_depth_equation(
    tunnel: ParametricTunnel,
    frame: ShapeFrame,
    d: float,
    phi: float,
    alpha: float,
    cfg: Optional[SensorConfig] = None,
    eta: Optional[float] = None,
    x0: float = 0.0,
    max_iter: int = 300,
) -> float:
    """Fixed-point root of the scaled-depth equation at one (phi, alpha).

    The map x -> -g_c(c + (d + x sin^2 alpha) e(phi) tan(alpha)) / sin^2
    alpha is a contraction for small alpha; iteration from any admissible
    start converges to the unique admissible root.
    """
    if eta is None:
        eta = resolve_eta(tunnel, cfg)
    root_tol = cfg.root_tol if cfg is not None else 1e-12
    s2 = math.sin(alpha) ** 2
    tana = math.tan(alpha)
    e = math.cos(phi) * frame.E_minus + math.sin(phi) * frame.E_plus

    def lam(x):
        p = frame.point + (d + x * s2) * tana * e
        g = patch_heights(tunnel, frame, p[None, :], eta)[0]
        return -g / s2

    x = float(x0)
    for _ in range(max_iter):
        x_new = lam(x)
        if abs(x_new - x) <= root_tol:
            return x_new
        x = x_new
    raise PatchEscape(f"depth equation did not converge from x0={x0:g}")
