"""Surface frames: normals, shape operator, principal directions, meridians.

All quantities derive from the analytic chart derivatives.  The unit normal
N points into the tunnel, and curvatures are signed so that a wall bending
toward the interior has positive normal curvature (a circular cylinder of
radius R has principal curvatures 0 and 1/R).

The frame of a point carries an orthonormal tangent basis (t1, t2) and the
symmetric 2x2 matrix of the shape operator in that basis; principal data
come from its eigendecomposition.  Signs of the eigenvector fields are fixed
either canonically (first significant component positive) or, when a
continuity context is supplied, by agreement with the previous query.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    CollinearInput,
    DegenerateChart,
    DegenerateProjection,
    NotTangent,
    UmbilicPoint,
)
from .tunnels import ParametricTunnel

UMBILIC_TOL = 1e-8
DEGENERATE_TOL = 1e-12


@dataclass(frozen=True)
class ShapeFrame:
    """Differential data of the tunnel surface at one chart point."""

    uv: np.ndarray            # chart coordinates, shape (2,)
    point: np.ndarray         # surface point, shape (3,)
    tangent_basis: np.ndarray  # orthonormal rows t1, t2, shape (2, 3)
    N: np.ndarray             # unit inward normal
    shape_op: np.ndarray      # symmetric 2x2 matrix in (t1, t2)
    kappa_minus: float
    kappa_plus: float
    E_minus: np.ndarray       # unit principal vector of kappa_minus
    E_plus: np.ndarray        # unit principal vector of kappa_plus
    tau: np.ndarray           # unit meridian tangent
    grad_B: np.ndarray        # surface gradient of the basis projection

    def tangent_coords(self, vec) -> np.ndarray:
        """Coordinates of a 3-vector in the (t1, t2) basis."""
        return self.tangent_basis @ np.asarray(vec, dtype=float)


@dataclass
class ContinuityContext:
    """Mutable sign memory for principal and meridian fields.

    Owned by a single caller; sharing across threads is not supported.
    """

    e_minus: Optional[np.ndarray] = None
    tau: Optional[np.ndarray] = None


def _canonical_sign(vecs):
    """Flip rows so the first component larger than tolerance is positive."""
    v = np.asarray(vecs, dtype=float)
    flat = v.reshape(-1, v.shape[-1])
    sign = np.ones(flat.shape[0])
    decided = np.zeros(flat.shape[0], dtype=bool)
    for k in range(v.shape[-1]):
        comp = flat[:, k]
        pick = (~decided) & (np.abs(comp) > DEGENERATE_TOL)
        sign[pick] = np.sign(comp[pick])
        decided |= pick
    return (flat * sign[:, None]).reshape(v.shape)


def frame_fields(tunnel: ParametricTunnel, u, v) -> dict:
    """Vectorized frame quantities at chart points (u, v).

    Returns a dict of arrays broadcast to the shape of u, v: point, t1, t2,
    N, shape (..., 2, 2), kappa_minus/plus, E_minus/plus, tau, grad_B,
    kappa_gap, tau_tau (normal curvature in the meridian direction).
    Raises DegenerateChart if the tangent basis is rank-deficient anywhere.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    d = tunnel.chart_derivs(u, v)

    E = np.einsum("...i,...i->...", d.ru, d.ru)
    F = np.einsum("...i,...i->...", d.ru, d.rv)
    G = np.einsum("...i,...i->...", d.rv, d.rv)
    w = np.cross(d.ru, d.rv)
    wn = np.linalg.norm(w, axis=-1)
    scale = np.sqrt(np.maximum(E, G))
    if np.any(wn <= DEGENERATE_TOL * np.maximum(1.0, scale**2)):
        bad = np.unravel_index(int(np.argmin(wn)), np.shape(wn)) if np.ndim(wn) else ()
        raise DegenerateChart(f"rank-deficient tangent basis near grid index {bad}")

    N = tunnel.orientation * w / wn[..., None]
    e = np.einsum("...i,...i->...", N, d.ruu)
    f = np.einsum("...i,...i->...", N, d.ruv)
    g = np.einsum("...i,...i->...", N, d.rvv)

    t1 = d.ru / np.sqrt(E)[..., None]
    t2raw = d.rv - (F / E)[..., None] * d.ru
    t2norm = np.sqrt(np.maximum(G - F**2 / E, 0.0))
    t2 = t2raw / t2norm[..., None]

    # shape operator in the orthonormal basis (t1, t2)
    s11 = e / E
    s12 = (f - e * F / E) / (np.sqrt(E) * t2norm)
    s22 = (e * (F / E) ** 2 - 2 * f * F / E + g) / (t2norm**2)
    S = np.stack(
        [np.stack([s11, s12], axis=-1), np.stack([s12, s22], axis=-1)], axis=-2
    )

    evals, evecs = np.linalg.eigh(S)
    kappa_minus = evals[..., 0]
    kappa_plus = evals[..., 1]
    a, b = evecs[..., 0, 0], evecs[..., 1, 0]
    E_minus = _canonical_sign(a[..., None] * t1 + b[..., None] * t2)
    E_plus = np.cross(N, E_minus)

    # surface gradient of B and the meridian tangent (level-set direction)
    _, Bu, Bv = tunnel.basis_derivs(u, v)
    dB1 = Bu / np.sqrt(E)
    dB2 = (Bv - F * Bu / E) / t2norm
    grad_B = dB1[..., None] * t1 + dB2[..., None] * t2
    gnorm = np.linalg.norm(grad_B, axis=-1)
    tau = _canonical_sign(np.cross(N, grad_B) / np.maximum(gnorm, DEGENERATE_TOL)[..., None])

    tau_a = np.einsum("...i,...i->...", tau, t1)
    tau_b = np.einsum("...i,...i->...", tau, t2)
    tau_tau = s11 * tau_a**2 + 2 * s12 * tau_a * tau_b + s22 * tau_b**2

    return {
        "point": d.r,
        "t1": t1,
        "t2": t2,
        "N": N,
        "shape": S,
        "kappa_minus": kappa_minus,
        "kappa_plus": kappa_plus,
        "E_minus": E_minus,
        "E_plus": E_plus,
        "tau": tau,
        "grad_B": grad_B,
        "grad_B_norm": gnorm,
        "kappa_gap": kappa_plus - kappa_minus,
        "tau_tau": tau_tau,
    }


def _match_sign(vec, reference):
    if reference is None:
        return vec
    return vec if float(np.dot(vec, reference)) >= 0.0 else -vec


def surface_frame(
    tunnel: ParametricTunnel, uv, ctx: Optional[ContinuityContext] = None
) -> ShapeFrame:
    """Full frame at a single chart point.

    Raises UmbilicPoint when the principal curvatures are closer than
    tolerance (the surface is then not a valid regular tunnel) and
    DegenerateChart on a rank-deficient tangent basis.
    """
    uv = np.asarray(uv, dtype=float).reshape(2)
    f = frame_fields(tunnel, uv[0], uv[1])
    gap = float(f["kappa_gap"])
    if gap < UMBILIC_TOL:
        raise UmbilicPoint(
            f"principal curvatures coincide at uv=({uv[0]:g}, {uv[1]:g}) (gap {gap:.3e})"
        )

    e_minus = np.asarray(f["E_minus"], dtype=float)
    tau = np.asarray(f["tau"], dtype=float)
    if ctx is not None:
        e_minus = _match_sign(e_minus, ctx.e_minus)
        tau = _match_sign(tau, ctx.tau)
        ctx.e_minus = e_minus
        ctx.tau = tau
    e_plus = np.cross(np.asarray(f["N"], dtype=float), e_minus)

    return ShapeFrame(
        uv=uv,
        point=np.asarray(f["point"], dtype=float),
        tangent_basis=np.stack([f["t1"], f["t2"]]),
        N=np.asarray(f["N"], dtype=float),
        shape_op=np.asarray(f["shape"], dtype=float),
        kappa_minus=float(f["kappa_minus"]),
        kappa_plus=float(f["kappa_plus"]),
        E_minus=e_minus,
        E_plus=e_plus,
        tau=tau,
        grad_B=np.asarray(f["grad_B"], dtype=float),
    )


def second_fundamental_form(frame: ShapeFrame, V, W, tol: float = 1e-8) -> float:
    """Quadratic curvature form <S V, W> for tangent vectors V, W."""
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    for name, vec in (("V", V), ("W", W)):
        n = np.linalg.norm(vec)
        if n > 0 and abs(float(np.dot(vec, frame.N))) > tol * n:
            raise NotTangent(f"{name} has a normal component above tolerance")
    a = frame.tangent_coords(V)
    b = frame.tangent_coords(W)
    return float(a @ frame.shape_op @ b)


def meridian_tangent(
    frame: ShapeFrame,
    ctx: Optional[ContinuityContext] = None,
    min_grad: float = 1e-10,
) -> np.ndarray:
    """Unit tangent of the meridian through the frame's point."""
    if np.linalg.norm(frame.grad_B) < min_grad:
        raise DegenerateProjection(
            f"basis projection gradient below {min_grad:g} at uv={tuple(frame.uv)}"
        )
    tau = frame.tau
    if ctx is not None:
        tau = _match_sign(tau, ctx.tau)
        ctx.tau = tau
    return tau


def _signed_sin(n, a, b):
    cross = np.cross(a, b)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    return np.einsum("...i,...i->...", n, cross) / (na * nb)


def sine_angle_ratio(Q, A, B) -> np.ndarray:
    """Ratio sin(angle(QA, QB)) / sin(angle(A, B)) for 2x2 operators.

    Vectorized over leading axes: Q has shape (..., 2, 2) and A, B shape
    (..., 2), all in a common orthonormal tangent basis with the normal out
    of the plane.  Raises CollinearInput when any input pair is collinear.
    """
    Q = np.asarray(Q, dtype=float)
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)

    def cross2(a, b):
        return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]

    na = np.linalg.norm(A, axis=-1)
    nb = np.linalg.norm(B, axis=-1)
    sin_ab = cross2(A, B) / (na * nb)
    if np.any(np.abs(sin_ab) < 1e-12):
        raise CollinearInput("input vectors are collinear within tolerance")
    QA = (Q @ A[..., None])[..., 0]
    QB = (Q @ B[..., None])[..., 0]
    sin_q = cross2(QA, QB) / (np.linalg.norm(QA, axis=-1) * np.linalg.norm(QB, axis=-1))
    return sin_q / sin_ab


def sine_angle_scaling(Q, A, B, frame: Optional[ShapeFrame] = None) -> float:
    """Scalar angle-sine ratio; accepts tangent 3-vectors with a frame."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[-1] == 3:
        if frame is None:
            raise ValueError("a frame is required to interpret 3-vector inputs")
        A = frame.tangent_coords(A)
        B = frame.tangent_coords(B)
    return float(sine_angle_ratio(Q, A, B))


def tangent_rotation(n, vec, angle) -> np.ndarray:
    """Rotate a tangent vector about the normal n by the given angle.

    Positive angles are counterclockwise when viewed from the side of n.
    """
    n = np.asarray(n, dtype=float)
    vec = np.asarray(vec, dtype=float)
    return np.cos(angle) * vec + np.sin(angle) * np.cross(n, vec)
