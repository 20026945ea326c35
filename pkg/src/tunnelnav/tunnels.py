"""Analytic tunnel surfaces: charts, derivatives, and interior indicators.

A tunnel is a smooth surface wrapped around a 1-D basis (a line, a circle,
or an interval); the level sets of the basis projection are simple closed
curves crossing which measures progress along the tunnel.  Every surface
here is an analytic parametric chart ``r(u, v)`` with closed-form first and
second derivatives, so downstream curvature computations carry no
discretization error.  The ``warped`` kind composes a base chart with a
low-degree polynomial diffeomorphism and propagates derivatives by the
chain rule.

Chart conventions shared by all built-in kinds:

* ``u`` runs along the tunnel for revolution kinds (axial coordinate) and
  around the tube for the torus (tube angle); ``v`` is the remaining angle.
* The cross product of the chart partials, ``r_u x r_v``, points into the
  tunnel interior; ``orientation`` records an extra sign for warps that
  reverse handedness.
* All chart evaluations broadcast over numpy arrays and return points with
  a trailing axis of length 3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

TWO_PI = 2.0 * math.pi


class ChartDerivs(NamedTuple):
    """Chart value and derivatives up to second order at (u, v)."""

    r: np.ndarray
    ru: np.ndarray
    rv: np.ndarray
    ruu: np.ndarray
    ruv: np.ndarray
    rvv: np.ndarray


def _stack3(x, y, z):
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1).astype(float)


class ParametricTunnel:
    """Base class for analytic tunnel charts.

    Instances are immutable after construction and safe to share between
    concurrent workers.  Subclasses fill in the chart, its derivatives, the
    basis projection in chart coordinates, and (where available) an implicit
    interior indicator used by the ray sensor.
    """

    kind = "abstract"
    basis_type = "line"  # "line" | "circle" | "interval"
    periodic_u = False
    periodic_v = True
    orientation = 1.0

    u_range: tuple[float, float]
    v_range: tuple[float, float]

    # -- chart ------------------------------------------------------------

    def chart(self, u, v) -> np.ndarray:
        raise NotImplementedError

    def chart_derivs(self, u, v) -> ChartDerivs:
        raise NotImplementedError

    def basis_derivs(self, u, v):
        """Basis projection B and its chart partials (B, B_u, B_v)."""
        raise NotImplementedError

    def basis_value(self, u, v):
        return self.basis_derivs(u, v)[0]

    # -- auxiliary geometry -------------------------------------------------

    def implicit(self, points) -> Optional[np.ndarray]:
        """Interior indicator, positive inside the tunnel, zero on it.

        Returns None when no closed form is available; callers fall back to
        a projection-based indicator.
        """
        return None

    def feature_size(self) -> float:
        """Smallest cross-sectional length scale, used for search radii."""
        raise NotImplementedError

    def boundary_samples(self, n: int = 128) -> Optional[np.ndarray]:
        """Sampled points of the edge meridians for interval-basis tunnels."""
        if self.basis_type != "interval":
            return None
        v = np.linspace(0.0, TWO_PI, n, endpoint=False)
        lo = self.chart(np.full_like(v, self.u_range[0]), v)
        hi = self.chart(np.full_like(v, self.u_range[1]), v)
        return np.concatenate([lo, hi], axis=0)

    # -- chart coordinate helpers -------------------------------------------

    def wrap_uv(self, u, v):
        """Wrap periodic chart coordinates into their base period."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.periodic_u:
            lo, hi = self.u_range
            u = lo + np.mod(u - lo, hi - lo)
        if self.periodic_v:
            lo, hi = self.v_range
            v = lo + np.mod(v - lo, hi - lo)
        return u, v

    def clamp_uv(self, u, v):
        """Wrap periodic and clamp non-periodic coordinates to the domain."""
        u, v = self.wrap_uv(u, v)
        if not self.periodic_u:
            u = np.clip(u, self.u_range[0], self.u_range[1])
        if not self.periodic_v:
            v = np.clip(v, self.v_range[0], self.v_range[1])
        return u, v

    def grid(self, nu: int, nv: int):
        """Meshgrid over the chart domain, excluding duplicated seam points."""
        u = np.linspace(*self.u_range, nu, endpoint=not self.periodic_u)
        v = np.linspace(*self.v_range, nv, endpoint=not self.periodic_v)
        return np.meshgrid(u, v, indexing="ij")

    def params(self) -> dict:
        """Constructor parameters, for scenario round-trips."""
        raise NotImplementedError


class Cylinder(ParametricTunnel):
    """Right circular cylinder of radius R about the z axis.

    Chart r(u, v) = (R cos v, R sin v, u); u is the basic coordinate.  With
    basis "interval" the tunnel is open and its edge circles sit at the ends
    of the axial range; with basis "line" it models a very long tunnel and
    has no edge.
    """

    kind = "cylinder"

    def __init__(self, radius: float, length: float = 20.0, basis: str = "line"):
        if radius <= 0 or length <= 0:
            raise ValueError("cylinder radius and length must be positive")
        if basis not in ("line", "interval"):
            raise ValueError(f"unsupported cylinder basis {basis!r}")
        self.radius = float(radius)
        self.length = float(length)
        self.basis_type = basis
        self.u_range = (-self.length / 2.0, self.length / 2.0)
        self.v_range = (0.0, TWO_PI)

    def chart(self, u, v):
        R = self.radius
        return _stack3(R * np.cos(v), R * np.sin(v), np.asarray(u, dtype=float))

    def chart_derivs(self, u, v):
        R = self.radius
        u = np.asarray(u, dtype=float)
        cv, sv = np.cos(v), np.sin(v)
        zero = np.zeros_like(cv * u)
        one = np.ones_like(zero)
        r = _stack3(R * cv, R * sv, u)
        ru = _stack3(zero, zero, one)
        rv = _stack3(-R * sv + zero, R * cv + zero, zero)
        ruu = _stack3(zero, zero, zero)
        ruv = _stack3(zero, zero, zero)
        rvv = _stack3(-R * cv + zero, -R * sv + zero, zero)
        return ChartDerivs(r, ru, rv, ruu, ruv, rvv)

    def basis_derivs(self, u, v):
        u = np.asarray(u, dtype=float)
        b = np.broadcast_arrays(u, np.asarray(v, dtype=float))[0]
        return b, np.ones_like(b), np.zeros_like(b)

    def implicit(self, points):
        p = np.asarray(points, dtype=float)
        return self.radius**2 - (p[..., 0] ** 2 + p[..., 1] ** 2)

    def feature_size(self):
        return self.radius

    def params(self):
        return {"radius": self.radius, "length": self.length, "basis": self.basis_type}


class Torus(ParametricTunnel):
    """Torus with centerline radius R and tube radius r, 0 < r < R.

    Chart r(u, v) = ((R + r cos u) cos v, (R + r cos u) sin v, r sin u);
    u is the tube angle, v the rotation angle around the axis, and the basic
    coordinate is v on a circle basis.  Meridians are the tube circles.
    """

    kind = "torus"
    basis_type = "circle"
    periodic_u = True
    periodic_v = True

    def __init__(self, big_radius: float, tube_radius: float):
        if not 0 < tube_radius < big_radius:
            raise ValueError("torus requires 0 < tube_radius < big_radius")
        self.big_radius = float(big_radius)
        self.tube_radius = float(tube_radius)
        self.u_range = (0.0, TWO_PI)
        self.v_range = (0.0, TWO_PI)

    def chart(self, u, v):
        R, r = self.big_radius, self.tube_radius
        w = R + r * np.cos(u)
        return _stack3(w * np.cos(v), w * np.sin(v), r * np.sin(u) + 0.0 * np.asarray(v, dtype=float))

    def chart_derivs(self, u, v):
        R, r = self.big_radius, self.tube_radius
        cu, su = np.cos(u), np.sin(u)
        cv, sv = np.cos(v), np.sin(v)
        w = R + r * cu
        zero = np.zeros_like(cu * cv)
        r_ = _stack3(w * cv, w * sv, r * su + zero)
        ru = _stack3(-r * su * cv, -r * su * sv, r * cu + zero)
        rv = _stack3(-w * sv, w * cv, zero)
        ruu = _stack3(-r * cu * cv, -r * cu * sv, -r * su + zero)
        ruv = _stack3(r * su * sv, -r * su * cv, zero)
        rvv = _stack3(-w * cv, -w * sv, zero)
        return ChartDerivs(r_, ru, rv, ruu, ruv, rvv)

    def basis_derivs(self, u, v):
        v = np.asarray(v, dtype=float)
        b = np.broadcast_arrays(v, np.asarray(u, dtype=float))[0]
        return b, np.zeros_like(b), np.ones_like(b)

    def implicit(self, points):
        p = np.asarray(points, dtype=float)
        rho = np.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2)
        return self.tube_radius**2 - ((rho - self.big_radius) ** 2 + p[..., 2] ** 2)

    def feature_size(self):
        return min(self.tube_radius, self.big_radius - self.tube_radius)

    def params(self):
        return {"big_radius": self.big_radius, "tube_radius": self.tube_radius}


class SurfaceOfRevolution(ParametricTunnel):
    """Tube obtained by revolving a positive polynomial profile about z.

    Chart r(u, v) = (p(u) cos v, p(u) sin v, u) with profile
    p(u) = sum_k coeffs[k] u^k.  The basic coordinate is u on an interval
    basis, so the tunnel is open with edge circles at the range ends.
    """

    kind = "surface_of_revolution"
    basis_type = "interval"

    def __init__(self, coeffs, b_range):
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.ndim != 1 or self.coeffs.size == 0:
            raise ValueError("profile coefficients must be a 1-D sequence")
        lo, hi = float(b_range[0]), float(b_range[1])
        if not lo < hi:
            raise ValueError("b_range must be increasing")
        self.u_range = (lo, hi)
        self.v_range = (0.0, TWO_PI)
        self._d1 = np.polynomial.polynomial.polyder(self.coeffs, 1)
        self._d2 = np.polynomial.polynomial.polyder(self.coeffs, 2)
        probe = self._profile(np.linspace(lo, hi, 257))
        if np.min(probe) <= 0:
            raise ValueError("profile must stay positive on the basic range")

    def _profile(self, u):
        return np.polynomial.polynomial.polyval(np.asarray(u, dtype=float), self.coeffs)

    def chart(self, u, v):
        rho = self._profile(u)
        return _stack3(rho * np.cos(v), rho * np.sin(v), np.asarray(u, dtype=float))

    def chart_derivs(self, u, v):
        u = np.asarray(u, dtype=float)
        rho = self._profile(u)
        d1 = np.polynomial.polynomial.polyval(u, self._d1)
        d2 = np.polynomial.polynomial.polyval(u, self._d2)
        cv, sv = np.cos(v), np.sin(v)
        zero = np.zeros_like(rho * cv)
        one = np.ones_like(zero)
        r = _stack3(rho * cv, rho * sv, u + zero)
        ru = _stack3(d1 * cv, d1 * sv, one)
        rv = _stack3(-rho * sv, rho * cv, zero)
        ruu = _stack3(d2 * cv, d2 * sv, zero)
        ruv = _stack3(-d1 * sv, d1 * cv, zero)
        rvv = _stack3(-rho * cv, -rho * sv, zero)
        return ChartDerivs(r, ru, rv, ruu, ruv, rvv)

    def basis_derivs(self, u, v):
        u = np.asarray(u, dtype=float)
        b = np.broadcast_arrays(u, np.asarray(v, dtype=float))[0]
        return b, np.ones_like(b), np.zeros_like(b)

    def implicit(self, points):
        # Clamp the axial coordinate so the polynomial extension beyond the
        # ends cannot fake extra interior pockets; spurious wall hits beyond
        # the range are rejected by the hit validation in the sensor.
        p = np.asarray(points, dtype=float)
        z = np.clip(p[..., 2], self.u_range[0], self.u_range[1])
        rho = self._profile(z)
        return rho**2 - (p[..., 0] ** 2 + p[..., 1] ** 2)

    def feature_size(self):
        u = np.linspace(*self.u_range, 257)
        return float(np.min(self._profile(u)))

    def params(self):
        return {"coeffs": self.coeffs.tolist(), "b_range": list(self.u_range)}


QUAD_TERMS = ("xx", "yy", "zz", "xy", "xz", "yz")


@dataclass(frozen=True)
class PolynomialWarp:
    """Degree-2 polynomial map of 3-space, W(x) = offset + A x + Q(x).

    ``quadratic`` holds one row of six coefficients per output component, in
    the monomial order x^2, y^2, z^2, xy, xz, yz.  The caller is responsible
    for keeping the map a diffeomorphism on the region of interest; the
    inverse is computed by Newton iteration.
    """

    linear: np.ndarray = field(default_factory=lambda: np.eye(3))
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quadratic: np.ndarray = field(default_factory=lambda: np.zeros((3, 6)))

    def __post_init__(self):
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float).reshape(3, 3))
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(3))
        object.__setattr__(self, "quadratic", np.asarray(self.quadratic, dtype=float).reshape(3, 6))

    @property
    def is_identity(self) -> bool:
        return (
            np.array_equal(self.linear, np.eye(3))
            and not self.offset.any()
            and not self.quadratic.any()
        )

    def _monomials(self, p):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        return np.stack([x * x, y * y, z * z, x * y, x * z, y * z], axis=-1)

    def apply(self, points):
        p = np.asarray(points, dtype=float)
        lin = p @ self.linear.T
        quad = self._monomials(p) @ self.quadratic.T
        return lin + quad + self.offset

    def jacobian(self, points):
        p = np.asarray(points, dtype=float)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        q = self.quadratic
        J = np.broadcast_to(self.linear, p.shape[:-1] + (3, 3)).copy()
        for i in range(3):
            J[..., i, 0] += 2 * q[i, 0] * x + q[i, 3] * y + q[i, 4] * z
            J[..., i, 1] += 2 * q[i, 1] * y + q[i, 3] * x + q[i, 5] * z
            J[..., i, 2] += 2 * q[i, 2] * z + q[i, 4] * x + q[i, 5] * y
        return J

    def hessian(self):
        """Constant component Hessians, shape (3, 3, 3)."""
        q = self.quadratic
        H = np.zeros((3, 3, 3))
        for i in range(3):
            H[i] = [
                [2 * q[i, 0], q[i, 3], q[i, 4]],
                [q[i, 3], 2 * q[i, 1], q[i, 5]],
                [q[i, 4], q[i, 5], 2 * q[i, 2]],
            ]
        return H

    def inverse(self, points, guess=None, tol=1e-13, max_iter=50):
        """Newton inversion for near-identity warps."""
        p = np.asarray(points, dtype=float)
        x = np.array(p if guess is None else np.broadcast_to(guess, p.shape), dtype=float)
        for _ in range(max_iter):
            res = self.apply(x) - p
            if np.max(np.abs(res)) < tol:
                break
            J = self.jacobian(x)
            x = x - np.linalg.solve(J, res[..., None])[..., 0]
        return x

    def to_dict(self):
        return {
            "linear": self.linear.tolist(),
            "offset": self.offset.tolist(),
            "quadratic": self.quadratic.tolist(),
        }


class WarpedTunnel(ParametricTunnel):
    """A base tunnel pushed through a polynomial diffeomorphism.

    The warped surface inherits the base basis projection (meridians map to
    meridians) and obtains chart derivatives by the chain rule, so frames on
    warped tunnels are as trustworthy as on the analytic kinds.
    """

    kind = "warped"

    def __init__(self, base: ParametricTunnel, warp: PolynomialWarp):
        if isinstance(base, WarpedTunnel):
            raise ValueError("nested warps are not supported; compose the warp instead")
        self.base = base
        self.warp = warp
        self.basis_type = base.basis_type
        self.periodic_u = base.periodic_u
        self.periodic_v = base.periodic_v
        self.u_range = base.u_range
        self.v_range = base.v_range
        mid = (0.5 * (base.u_range[0] + base.u_range[1]), 0.5 * (base.v_range[0] + base.v_range[1]))
        det = float(np.linalg.det(warp.jacobian(base.chart(*mid))))
        if det == 0.0:
            raise ValueError("warp jacobian is singular on the surface")
        self.orientation = base.orientation * math.copysign(1.0, det)

    def chart(self, u, v):
        return self.warp.apply(self.base.chart(u, v))

    def chart_derivs(self, u, v):
        d = self.base.chart_derivs(u, v)
        J = self.warp.jacobian(d.r)
        H = self.warp.hessian()

        def push1(vec):
            return (J @ vec[..., None])[..., 0]

        def push2(sec, a, b):
            # second derivative of W(r): H(a, b) + J sec
            quad = np.einsum("...a,iab,...b->...i", a, H, b)
            return quad + push1(sec)

        return ChartDerivs(
            self.warp.apply(d.r),
            push1(d.ru),
            push1(d.rv),
            push2(d.ruu, d.ru, d.ru),
            push2(d.ruv, d.ru, d.rv),
            push2(d.rvv, d.rv, d.rv),
        )

    def basis_derivs(self, u, v):
        return self.base.basis_derivs(u, v)

    def implicit(self, points):
        inner = self.base.implicit(points)
        if inner is None:
            return None
        if self.warp.is_identity:
            return inner
        return self.base.implicit(self.warp.inverse(points))

    def feature_size(self):
        U, V = self.base.grid(17, 17)
        J = self.warp.jacobian(self.base.chart(U, V))
        svals = np.linalg.svd(J, compute_uv=False)
        return self.base.feature_size() * float(np.min(svals))

    def boundary_samples(self, n: int = 128):
        pts = self.base.boundary_samples(n)
        return None if pts is None else self.warp.apply(pts)

    def params(self):
        return {
            "base": {"kind": self.base.kind, **self.base.params()},
            "warp": self.warp.to_dict(),
        }


def make_tunnel(kind: str, **params) -> ParametricTunnel:
    """Build a tunnel from its scenario description."""
    if kind == "cylinder":
        return Cylinder(**params)
    if kind == "torus":
        return Torus(**params)
    if kind == "surface_of_revolution":
        return SurfaceOfRevolution(**params)
    if kind == "warped":
        base_spec = dict(params["base"])
        base = make_tunnel(base_spec.pop("kind"), **base_spec)
        warp = PolynomialWarp(**params["warp"])
        return WarpedTunnel(base, warp)
    raise ValueError(f"unknown tunnel kind {kind!r}")
