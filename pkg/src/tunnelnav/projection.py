"""Nearest-point projection, normal offsets, and offset-surface calculus.

Projection onto the tunnel wall is a global problem solved in two stages: a
coarse chart-grid scan locates the basin, a damped Newton iteration on the
squared distance refines the foot to machine precision.  The dense scan on
its own doubles as the brute-force oracle mode used by tests and the
``--oracle`` CLI flag.

The normal offset map ``h(d, s) = s + d N(s)`` and the surface of desired
robot positions it generates are certified (injectivity, operator-norm
bounds) rather than proven; the verification suites drive those checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .audit import OperationalZone
from .errors import (
    NonUniqueProjection,
    OffsetOutOfRange,
    ProjectionOnBoundary,
    StepUnderflow,
    VanishingField,
)
from .frames import frame_fields, tangent_rotation
from .tunnels import ParametricTunnel

UNIQUE_TOL = 1e-6


@dataclass(frozen=True)
class ProjectionResult:
    """Nearest point of the tunnel wall to a query point."""

    foot_uv: np.ndarray
    foot_point: np.ndarray
    distance: float
    direction: np.ndarray      # unit vector from the query toward the foot
    uniqueness_gap: float      # competing-basin distance minus the best


def _projection_grid(tunnel: ParametricTunnel, grid: int):
    """Cached flattened chart grid used for coarse scans.

    Built on first use per resolution and immutable afterwards, so shared
    readers are safe.
    """
    cache = getattr(tunnel, "_projection_grids", None)
    if cache is None:
        cache = {}
        setattr(tunnel, "_projection_grids", cache)
    if grid not in cache:
        U, V = tunnel.grid(grid, grid)
        pts = tunnel.chart(U, V).reshape(-1, 3)
        cache[grid] = (U.ravel().copy(), V.ravel().copy(), pts)
    return cache[grid]


def _coarse_scan(tunnel, points, grid):
    gu, gv, gpts = _projection_grid(tunnel, grid)
    # ||p - g||^2 = |p|^2 - 2 p.g + |g|^2 up to the common |p|^2 term
    cross = points @ gpts.T
    d2 = np.sum(gpts**2, axis=1)[None, :] - 2.0 * cross
    best = np.argmin(d2, axis=1)
    return gu[best].copy(), gv[best].copy(), gpts


def _newton_refine(tunnel, points, u, v, max_iter=60):
    """Vectorized damped Newton on f(u,v) = |chart(u,v) - p|^2."""
    def objective(uu, vv):
        diff = tunnel.chart(uu, vv) - points
        return np.sum(diff * diff, axis=-1)

    f = objective(u, v)
    span = max(
        tunnel.u_range[1] - tunnel.u_range[0], tunnel.v_range[1] - tunnel.v_range[0]
    )
    for _ in range(max_iter):
        d = tunnel.chart_derivs(u, v)
        delta = d.r - points
        g1 = 2.0 * np.einsum("...i,...i->...", delta, d.ru)
        g2 = 2.0 * np.einsum("...i,...i->...", delta, d.rv)
        h11 = 2.0 * (np.einsum("...i,...i->...", d.ru, d.ru) + np.einsum("...i,...i->...", delta, d.ruu))
        h12 = 2.0 * (np.einsum("...i,...i->...", d.ru, d.rv) + np.einsum("...i,...i->...", delta, d.ruv))
        h22 = 2.0 * (np.einsum("...i,...i->...", d.rv, d.rv) + np.einsum("...i,...i->...", delta, d.rvv))
        det = h11 * h22 - h12 * h12
        ok = (det > 1e-300) & (h11 > 0)
        su = np.where(ok, -(h22 * g1 - h12 * g2) / np.where(ok, det, 1.0), -g1 / (np.abs(h11) + np.abs(h22) + 1e-12))
        sv = np.where(ok, -(h11 * g2 - h12 * g1) / np.where(ok, det, 1.0), -g2 / (np.abs(h11) + np.abs(h22) + 1e-12))

        scale = np.ones_like(f)
        pending = np.ones_like(f, dtype=bool)
        un, vn, fn = u.copy(), v.copy(), f.copy()
        for _bt in range(30):
            cu = u + scale * su
            cv = v + scale * sv
            cu, cv = tunnel.clamp_uv(cu, cv)
            fc = objective(cu, cv)
            improved = pending & (fc <= f * (1 + 1e-14) + 1e-300)
            un = np.where(improved, cu, un)
            vn = np.where(improved, cv, vn)
            fn = np.where(improved, fc, fn)
            pending = pending & ~improved
            if not pending.any():
                break
            scale = np.where(pending, scale * 0.5, scale)
        step = np.maximum(np.abs(un - u), np.abs(vn - v))
        u, v, f = un, vn, fn
        gnorm = np.maximum(np.abs(g1), np.abs(g2))
        if np.all((gnorm < 1e-12 * (1.0 + f)) | (step < 1e-15 * span)):
            break
    return u, v, f


def project_batch(
    tunnel: ParametricTunnel,
    points,
    grid: int = 64,
    refine: bool = True,
    exclusion_radius: Optional[float] = None,
):
    """Project many points at once.

    Returns a dict of arrays: foot_uv (N, 2), foot_point (N, 3), distance,
    direction, uniqueness_gap.  No uniqueness or boundary policy is applied;
    scalar ``project`` layers the error contracts on top.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    u, v, gpts = _coarse_scan(tunnel, points, grid)
    if refine:
        u, v, _ = _newton_refine(tunnel, points, u, v)
    foot = tunnel.chart(u, v)
    diff = foot - points
    dist = np.linalg.norm(diff, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        direction = diff / dist[..., None]

    if exclusion_radius is None:
        exclusion_radius = tunnel.feature_size()
    d_foot = np.linalg.norm(gpts[None, :, :] - foot[:, None, :], axis=-1)
    d_query = np.linalg.norm(gpts[None, :, :] - points[:, None, :], axis=-1)
    outside = d_foot >= exclusion_radius
    second = np.where(outside, d_query, np.inf).min(axis=1)
    gap = second - dist

    return {
        "foot_uv": np.stack([u, v], axis=-1),
        "foot_point": foot,
        "distance": dist,
        "direction": direction,
        "uniqueness_gap": gap,
    }


def _boundary_points(tunnel: ParametricTunnel, n: int = 256):
    cached = getattr(tunnel, "_boundary_points", None)
    if cached is None:
        cached = tunnel.boundary_samples(n)
        setattr(tunnel, "_boundary_points", cached)
    return cached


def project(
    tunnel: ParametricTunnel,
    r,
    grid: int = 64,
    oracle: bool = False,
    boundary_margin: float = 0.0,
    unique_tol: float = UNIQUE_TOL,
) -> ProjectionResult:
    """Nearest point of the tunnel wall to ``r``.

    Raises NonUniqueProjection when a competing projection basin comes
    within tolerance of the best one (for example on the axis of a
    cylinder), and ProjectionOnBoundary when the foot of an open tunnel
    falls within ``boundary_margin`` of the edge.
    """
    r = np.asarray(r, dtype=float).reshape(3)
    res = project_batch(tunnel, r[None, :], grid=grid, refine=not oracle)
    dist = float(res["distance"][0])
    if dist <= 1e-12:
        raise ValueError("query point lies on the surface; projection direction undefined")
    gap = float(res["uniqueness_gap"][0])
    if gap < unique_tol * (1.0 + dist):
        raise NonUniqueProjection(
            f"projection of {tuple(r)} is ambiguous: basin gap {gap:.3e}"
        )
    foot_uv = res["foot_uv"][0]
    if boundary_margin > 0.0:
        bpts = _boundary_points(tunnel)
        if bpts is not None:
            edge_dist = float(np.min(np.linalg.norm(bpts - res["foot_point"][0], axis=-1)))
            if edge_dist < boundary_margin:
                raise ProjectionOnBoundary(
                    f"foot is {edge_dist:.4g} from the tunnel edge (margin {boundary_margin:g})",
                    foot_uv=foot_uv,
                    distance=dist,
                )
    return ProjectionResult(
        foot_uv=foot_uv,
        foot_point=res["foot_point"][0],
        distance=dist,
        direction=res["direction"][0],
        uniqueness_gap=gap,
    )


def projection_residual(tunnel: ParametricTunnel, r, result: ProjectionResult) -> float:
    """First-order optimality residual: tangential part of the offset vector."""
    f = frame_fields(tunnel, result.foot_uv[0], result.foot_uv[1])
    offset = np.asarray(r, dtype=float) - result.foot_point
    normal_part = float(np.dot(offset, f["N"])) * np.asarray(f["N"], dtype=float)
    return float(np.linalg.norm(offset - normal_part))


# -- normal offsets ---------------------------------------------------------


def offset_points(tunnel: ParametricTunnel, d, u, v) -> np.ndarray:
    """Vectorized normal offset h(d, s) = s + d N(s) at chart points."""
    f = frame_fields(tunnel, u, v)
    d = np.asarray(d, dtype=float)
    return f["point"] + d[..., None] * f["N"]


def offset_point(
    tunnel: ParametricTunnel,
    d: float,
    uv,
    zone: Optional[OperationalZone] = None,
) -> np.ndarray:
    """Single normal offset with the operational-zone range check."""
    if zone is not None:
        eps = zone.d_minus / 2.0
        if not (-eps < d < zone.d_plus):
            raise OffsetOutOfRange(
                f"offset depth {d:g} outside (-{eps:g}, {zone.d_plus:g})"
            )
    uv = np.asarray(uv, dtype=float).reshape(2)
    return offset_points(tunnel, d, uv[0], uv[1])


@dataclass(frozen=True)
class OffsetFrame:
    """Frame of the offset surface at the image of a base chart point."""

    uv: np.ndarray
    point: np.ndarray
    tangent_basis: np.ndarray  # rows t1, t2 (shared with the base surface)
    N_star: np.ndarray         # unit normal of the offset surface, away from the wall
    tau_star: np.ndarray       # unit offset meridian tangent


class OffsetSurface:
    """The surface of points at constant clearance d_star from the wall.

    Frames reuse the base tangent plane (the offset map preserves it) and
    obtain the offset meridian field by pushing the base meridian tangent
    through the offset differential Id - d_star * S.
    """

    def __init__(self, base: ParametricTunnel, d_star: float):
        if d_star <= 0:
            raise ValueError("d_star must be positive")
        self.base = base
        self.d_star = float(d_star)

    def fields(self, u, v) -> dict:
        """Vectorized offset frame data at base chart points."""
        f = frame_fields(self.base, u, v)
        S = f["shape"]
        eye = np.eye(2)
        J2 = eye - self.d_star * S  # offset differential in the (t1, t2) basis

        tau_a = np.einsum("...i,...i->...", f["tau"], f["t1"])
        tau_b = np.einsum("...i,...i->...", f["tau"], f["t2"])
        ja = J2[..., 0, 0] * tau_a + J2[..., 0, 1] * tau_b
        jb = J2[..., 1, 0] * tau_a + J2[..., 1, 1] * tau_b
        pushed = ja[..., None] * f["t1"] + jb[..., None] * f["t2"]
        norm = np.linalg.norm(pushed, axis=-1)
        tau_star = pushed / norm[..., None]

        return {
            "point": f["point"] + self.d_star * f["N"],
            "t1": f["t1"],
            "t2": f["t2"],
            "N_star": f["N"],
            "tau_star": tau_star,
            "tau_push_norm": norm,
            "offset_jacobian": J2,
            "base": f,
        }

    def point(self, u, v) -> np.ndarray:
        return offset_points(self.base, self.d_star, u, v)

    def first_derivs(self, u, v):
        """Offset chart partials P_u, P_v via the analytic normal derivative."""
        d = self.base.chart_derivs(u, v)
        w = np.cross(d.ru, d.rv)
        wn = np.linalg.norm(w, axis=-1)[..., None]
        wu = np.cross(d.ruu, d.rv) + np.cross(d.ru, d.ruv)
        wv = np.cross(d.ruv, d.rv) + np.cross(d.ru, d.rvv)
        orient = self.base.orientation

        def dunit(dw):
            wdw = np.einsum("...i,...i->...", w, dw)[..., None]
            return orient * (dw / wn - w * wdw / wn**3)

        N = orient * w / wn
        P = d.r + self.d_star * N
        Pu = d.ru + self.d_star * dunit(wu)
        Pv = d.rv + self.d_star * dunit(wv)
        return P, Pu, Pv

    def frame(self, uv, align_tau_with=None) -> OffsetFrame:
        uv = np.asarray(uv, dtype=float).reshape(2)
        f = self.fields(uv[0], uv[1])
        tau = np.asarray(f["tau_star"], dtype=float)
        if align_tau_with is not None and float(np.dot(tau, align_tau_with)) < 0.0:
            tau = -tau
        return OffsetFrame(
            uv=uv,
            point=np.asarray(f["point"], dtype=float),
            tangent_basis=np.stack([f["t1"], f["t2"]]),
            N_star=np.asarray(f["N_star"], dtype=float),
            tau_star=tau,
        )

    def chart_velocity(self, uv, V):
        """Chart-coordinate velocity w with d/dt chart(uv + t w) = V."""
        uv = np.asarray(uv, dtype=float).reshape(2)
        _, Pu, Pv = self.first_derivs(uv[0], uv[1])
        g11 = float(Pu @ Pu)
        g12 = float(Pu @ Pv)
        g22 = float(Pv @ Pv)
        rhs = np.array([float(Pu @ V), float(Pv @ V)])
        det = g11 * g22 - g12 * g12
        return np.array([(g22 * rhs[0] - g12 * rhs[1]) / det, (g11 * rhs[1] - g12 * rhs[0]) / det])


def covariant_derivative(
    offset: OffsetSurface,
    fieldfn: Callable[[np.ndarray], np.ndarray],
    uv,
    V,
    step: float = 1e-5,
) -> np.ndarray:
    """Tangential derivative of a tangent field along velocity V.

    The field is sampled along the chart curve with velocity V and
    differentiated by central differences using an arc-length step, then
    projected back onto the tangent plane.
    """
    if step < 1e-12:
        raise StepUnderflow(f"finite-difference step {step:g} below 1e-12")
    uv = np.asarray(uv, dtype=float).reshape(2)
    V = np.asarray(V, dtype=float).reshape(3)
    speed = float(np.linalg.norm(V))
    if speed == 0.0:
        return np.zeros(3)
    w = offset.chart_velocity(uv, V)
    h = step / speed
    fp = np.asarray(fieldfn(uv + h * w), dtype=float)
    fm = np.asarray(fieldfn(uv - h * w), dtype=float)
    deriv = (fp - fm) / (2.0 * h)
    n = offset.frame(uv).N_star
    return deriv - float(deriv @ n) * n


def perp_component(vec, axis) -> np.ndarray:
    """Component of ``vec`` orthogonal to ``axis`` (general 3-vector form)."""
    axis = np.asarray(axis, dtype=float)
    vec = np.asarray(vec, dtype=float)
    return vec - (float(vec @ axis) / float(axis @ axis)) * axis


def angle_rate_residual(
    offset: OffsetSurface,
    motion: Callable[[float], np.ndarray],
    Vf: Callable[[float], np.ndarray],
    Wf: Callable[[float], np.ndarray],
    t: float,
    step: float = 1e-5,
) -> float:
    """Mismatch of the tangent-plane angle-rate identity at time t.

    The rate of the signed angle between two moving tangent fields is
    compared against the covariant-derivative expression; both sides are
    evaluated by central finite differences with the given step.
    """
    if step < 1e-12:
        raise StepUnderflow(f"finite-difference step {step:g} below 1e-12")

    def frame_at(s):
        return offset.frame(motion(s))

    def angle(s, branch_ref=None):
        fr = frame_at(s)
        Vv, Ww = np.asarray(Vf(s), dtype=float), np.asarray(Wf(s), dtype=float)
        nv, nw = np.linalg.norm(Vv), np.linalg.norm(Ww)
        if nv < 1e-14 or nw < 1e-14:
            raise VanishingField("V or W vanishes along the motion")
        s_sin = float(fr.N_star @ np.cross(Vv, Ww)) / (nv * nw)
        s_cos = float(Vv @ Ww) / (nv * nw)
        phi = float(np.arctan2(s_sin, s_cos))
        if branch_ref is not None:
            while phi - branch_ref > np.pi:
                phi -= 2 * np.pi
            while phi - branch_ref < -np.pi:
                phi += 2 * np.pi
        return phi

    phi0 = angle(t)
    phidot = (angle(t + step, phi0) - angle(t - step, phi0)) / (2.0 * step)
    lhs = phidot * np.cos(phi0)

    fr = frame_at(t)
    V0 = np.asarray(Vf(t), dtype=float)
    W0 = np.asarray(Wf(t), dtype=float)

    def nabla(fieldfn):
        fp = np.asarray(fieldfn(t + step), dtype=float)
        fm = np.asarray(fieldfn(t - step), dtype=float)
        deriv = (fp - fm) / (2.0 * step)
        return deriv - float(deriv @ fr.N_star) * fr.N_star

    rot_w = tangent_rotation(fr.N_star, W0, -np.pi / 2.0)
    rot_v = tangent_rotation(fr.N_star, V0, -np.pi / 2.0)
    rhs = (
        float(perp_component(nabla(Vf), V0) @ rot_w)
        - float(perp_component(nabla(Wf), W0) @ rot_v)
    ) / (np.linalg.norm(V0) * np.linalg.norm(W0))
    return abs(lhs - rhs)


def aligned_tau_field(offset: OffsetSurface) -> Callable[[np.ndarray], np.ndarray]:
    """Offset meridian field with sign continuity across successive calls.

    The returned callable is stateful and caller-owned; do not share it
    between concurrent evaluations.
    """
    ref = {"tau": None}

    def field(uv):
        fr = offset.frame(uv, align_tau_with=ref["tau"])
        ref["tau"] = fr.tau_star
        return fr.tau_star

    return field


def estimate_tau_lipschitz(
    offset: OffsetSurface, grid: int = 32, n_dirs: int = 8, step: float = 1e-5
) -> float:
    """Max sampled ratio |nabla_V tau*| / |V| over a chart grid.

    Directions sweep a half-turn of each tangent plane; finite differences
    are sign-aligned so the two-valued meridian field never flips inside a
    stencil.
    """
    U, V = offset.base.grid(grid, grid)
    u = U.ravel()
    v = V.ravel()
    P, Pu, Pv = offset.first_derivs(u, v)
    f = offset.fields(u, v)
    t1, t2 = f["t1"], f["t2"]
    tau0 = f["tau_star"]
    n_star = f["N_star"]

    g11 = np.einsum("...i,...i->...", Pu, Pu)
    g12 = np.einsum("...i,...i->...", Pu, Pv)
    g22 = np.einsum("...i,...i->...", Pv, Pv)
    det = g11 * g22 - g12 * g12

    best = 0.0
    for k in range(n_dirs):
        theta = np.pi * k / n_dirs
        Vvec = np.cos(theta) * t1 + np.sin(theta) * t2
        rhs1 = np.einsum("...i,...i->...", Pu, Vvec)
        rhs2 = np.einsum("...i,...i->...", Pv, Vvec)
        wu = (g22 * rhs1 - g12 * rhs2) / det
        wv = (g11 * rhs2 - g12 * rhs1) / det
        taup = offset.fields(u + step * wu, v + step * wv)["tau_star"]
        taum = offset.fields(u - step * wu, v - step * wv)["tau_star"]
        # sign-align both ends with the center value
        taup = taup * np.sign(np.einsum("...i,...i->...", taup, tau0))[..., None]
        taum = taum * np.sign(np.einsum("...i,...i->...", taum, tau0))[..., None]
        deriv = (taup - taum) / (2.0 * step)
        deriv = deriv - np.einsum("...i,...i->...", deriv, n_star)[..., None] * n_star
        best = max(best, float(np.max(np.linalg.norm(deriv, axis=-1))))
    return best


def uniqueness_gap_profile(tunnel: ParametricTunnel, depths, grid: int = 24, scan_grid: int = 64):
    """Minimal projection-basin gap of offset points at the given depths.

    Sweeps the whole chart grid at each depth; a non-positive entry means
    some offset point has an ambiguous projection, i.e. the unique-footpoint
    assumption fails inside the certified depth range.
    """
    U, V = tunnel.grid(grid, grid)
    out = []
    for d in depths:
        pts = offset_points(tunnel, float(d), U, V).reshape(-1, 3)
        res = project_batch(tunnel, pts, grid=scan_grid)
        out.append(float(np.min(res["uniqueness_gap"])))
    return out
