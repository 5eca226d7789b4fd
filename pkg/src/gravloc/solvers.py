"""Closed-form 4DoF pose solvers from two features with known pitch and roll.

Every solver reduces the problem to a single equation
``A cos(yaw) + B sin(yaw) + C = 0`` and back-substitutes the translation.
All real roots are returned; choosing between them is left to the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .config import TOL
from .geometry import (
    Attitude,
    GeometryError,
    Intrinsics,
    Pose,
    ProjectionRay,
    RigidTransform,
    cross3,
    frame_from_three_points,
    norm3,
    pixel_to_ray,
    wrap_angle,
)
from .matches import LineMatch, PointMatch


class SolverError(GeometryError):
    pass


class Degenerate(SolverError):
    pass


class DuplicateMatch(Degenerate):
    pass


class ParallelRays(Degenerate):
    pass


class ParallelPlanes(Degenerate):
    pass


class NumericalDegeneracy(Degenerate):
    pass


class NoRealSolution(SolverError):
    pass


class IllConditioned(SolverError):
    pass


@dataclass
class SolverOutput:
    poses: list = field(default_factory=list)
    # smallest pivot magnitude met during elimination
    conditioning: float = math.inf

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)


def solve_trig(A: float, B: float, C: float) -> list[float]:
    """Real roots of ``A cos(x) + B sin(x) + C = 0`` in (-pi, pi].

    Uses the half-angle substitution ``t = tan(x/2)``, which turns the
    equation into ``(C - A) t^2 + 2 B t + (A + C) = 0``.  Roots are recovered
    through ``atan2`` so the ``t -> inf`` root (``x = pi``) needs no special
    branch beyond a vanishing quadratic coefficient.
    """
    qa, qb, qc = C - A, B, A + C
    r2 = A * A + B * B
    if r2 == 0.0 or not math.isfinite(r2):
        raise IllConditioned("equation has no yaw dependence")
    disc = qb * qb - qa * qc  # == A^2 + B^2 - C^2
    if disc < 0.0:
        if disc < -TOL.discriminant * r2:
            raise NoRealSolution(f"discriminant {disc:.3e} < 0")
        disc = 0.0
    q = -(qb + math.copysign(math.sqrt(disc), qb))
    if q == 0.0:
        # B == 0 and C == +-A: a double root at 0 or at pi
        return [math.pi] if qa == 0.0 else [0.0]
    roots = [wrap_angle(2.0 * math.atan2(q, qa)), wrap_angle(2.0 * math.atan2(qc, q))]
    if disc == 0.0 or abs(wrap_angle(roots[0] - roots[1])) < 1e-15:
        return roots[:1]
    return roots


def check_degeneracy_1p1l(pm: PointMatch, lm: LineMatch) -> bool:
    """True when the point lies on the line, in the map or in the image."""
    X = pm.world
    L0, L1 = lm.world_endpoints
    u = L1 - L0
    d3 = norm3(cross3(X - L0, u)) / norm3(u)
    if d3 < TOL.degenerate_world:
        return True
    p0, p1 = lm.pixel_endpoints
    v = p1 - p0
    w = pm.pixel - p0
    d2 = abs(v[0] * w[1] - v[1] * w[0]) / math.hypot(v[0], v[1])
    return bool(d2 < TOL.degenerate_pixel)


class IntermediateFrame(NamedTuple):
    transform: RigidTransform  # camera frame -> intermediate camera frame
    point: np.ndarray  # (a1, b1): where the point ray crosses z = 0
    endpoint_x: float  # x coordinate of the second endpoint on the x axis


def intermediate_frame_1p1l(d1: ProjectionRay, d2: ProjectionRay, d3: ProjectionRay) -> IntermediateFrame:
    """Camera frame with centre (0,0,-1), the first line ray on the z axis
    through the origin and the second line ray crossing the +x axis."""
    r1, r2, r3 = d1.direction, d2.direction, d3.direction
    c23 = float(r2 @ r3)
    if c23 > 1.0 - TOL.geometric:
        raise ParallelRays("line endpoint rays are parallel")
    if norm3(r1 - r2) < TOL.geometric:
        raise NumericalDegeneracy("point ray coincides with line endpoint ray")
    x3 = math.tan(math.acos(c23))
    src = np.array([np.zeros(3), r2, r3 / c23])
    dst = np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 0.0], [x3, 0.0, 0.0]])
    try:
        T = frame_from_three_points(src, dst)
    except GeometryError as exc:
        raise NumericalDegeneracy(str(exc)) from exc
    q = T.rotation @ r1
    if q[2] < TOL.geometric:
        raise NumericalDegeneracy("point ray does not reach the z = 0 plane")
    s = 1.0 / q[2]
    return IntermediateFrame(T, np.array([s * q[0], s * q[1]]), x3)


def _cs_row(m: np.ndarray, L: np.ndarray) -> tuple[float, float, float]:
    """``m @ Rz(yaw).T @ L`` as coefficients of (cos, sin, 1)."""
    return (
        m[0] * L[0] + m[1] * L[1],
        m[0] * L[1] - m[1] * L[0],
        m[2] * L[2],
    )


def _rz_t(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def solve_1p1l(pm: PointMatch, lm: LineMatch, attitude: Attitude, K: Intrinsics) -> SolverOutput:
    """Pose from one point match and one line match."""
    if check_degeneracy_1p1l(pm, lm):
        raise Degenerate("point lies on the line")
    d1 = pixel_to_ray(K, pm.pixel)
    d2 = pixel_to_ray(K, lm.pixel_endpoints[0])
    d3 = pixel_to_ray(K, lm.pixel_endpoints[1])
    T1, (a1, b1), _ = intermediate_frame_1p1l(d1, d2, d3)
    R1, t1 = T1.rotation, T1.translation

    # rotation intermediate-camera <- world is M @ Rz(yaw).T
    M = R1 @ attitude.matrix.T
    P1 = pm.world
    L2 = lm.world_endpoints[0] - P1
    L3 = lm.world_endpoints[1] - P1
    # both endpoints on the y = 0 plane; their difference removes the translation
    A, B, C = _cs_row(M[1], L2 - L3)
    if abs(b1) < TOL.pivot:
        raise IllConditioned("point ray lies in the line's interpretation plane")
    roots = solve_trig(A, B, C)
    Lm = 0.5 * (L2 + L3)
    cm = _cs_row(M[1], Lm)
    out = SolverOutput(conditioning=min(abs(b1), math.hypot(A, B)))
    for yaw in roots:
        c, s = math.cos(yaw), math.sin(yaw)
        T2 = -(cm[0] * c + cm[1] * s + cm[2])
        depth = T2 / b1
        t = np.array([a1 * depth, T2, depth - 1.0])
        R = M @ _rz_t(yaw)
        R_cw = R1.T @ R
        t_cw = R1.T @ (t - R @ P1 - t1)
        out.poses.append(Pose(yaw, attitude, -R_cw.T @ t_cw))
    return out


def solve_2p(pm1: PointMatch, pm2: PointMatch, attitude: Attitude, K: Intrinsics) -> SolverOutput:
    """Pose from two point matches."""
    if np.linalg.norm(pm1.pixel - pm2.pixel) < TOL.geometric or np.linalg.norm(pm1.world - pm2.world) < TOL.geometric:
        raise DuplicateMatch("point matches coincide")
    a1, b1 = K.normalize(pm1.pixel)
    a2, b2 = K.normalize(pm2.pixel)
    M = attitude.matrix.T
    P1 = pm1.world
    X, Y, Z = pm2.world - P1
    mc = M @ np.array([X, Y, 0.0])
    ms = M @ np.array([Y, -X, 0.0])
    m0 = M @ np.array([0.0, 0.0, Z])
    # the second point, R P + depth * (a1, b1, 1), must lie on the ray (a2, b2, 1)
    e1 = np.array([mc[0] - a2 * mc[2], ms[0] - a2 * ms[2], m0[0] - a2 * m0[2]])
    e2 = np.array([mc[1] - b2 * mc[2], ms[1] - b2 * ms[2], m0[1] - b2 * m0[2]])
    g1, g2 = a1 - a2, b1 - b2
    pivot = max(abs(g1), abs(g2))
    if pivot < TOL.pivot:
        raise IllConditioned("image points coincide")
    A, B, C = g2 * e1 - g1 * e2
    roots = solve_trig(A, B, C)
    e, g = (e1, g1) if abs(g1) >= abs(g2) else (e2, g2)
    D1 = np.array([a1, b1, 1.0])
    out = SolverOutput(conditioning=min(pivot, math.hypot(A, B)))
    for yaw in roots:
        depth = -(e[0] * math.cos(yaw) + e[1] * math.sin(yaw) + e[2]) / g
        R_wc = _rz_t(yaw).T @ attitude.matrix
        out.poses.append(Pose(yaw, attitude, P1 - depth * (R_wc @ D1)))
    return out


def two_lines_constraint_system(
    lm1: LineMatch, lm2: LineMatch, attitude: Attitude, K: Intrinsics
) -> tuple[np.ndarray, np.ndarray]:
    """Linear constraints from two line matches in the unknowns
    ``(cos yaw, sin yaw, T1, T2, T3)``.

    Returns ``(coefficients, rhs)`` with ``coefficients @ x = rhs``, one row
    per world endpoint, after moving the camera to an intermediate frame
    whose z axis is the intersection of the two interpretation planes.
    """
    d = [pixel_to_ray(K, p).direction for p in (*lm1.pixel_endpoints, *lm2.pixel_endpoints)]
    n1 = np.cross(d[0], d[1])
    n2 = np.cross(d[2], d[3])
    n1 /= np.linalg.norm(n1)
    n2 /= np.linalg.norm(n2)
    d12 = np.cross(n1, n2)
    nd = np.linalg.norm(d12)
    if nd < TOL.geometric:
        raise ParallelPlanes("interpretation planes are parallel")
    d12 /= nd
    if d12[2] < 0:
        d12 = -d12
    c = float(d[0] @ d12)
    if abs(c) < TOL.geometric or c > 1.0 - TOL.geometric:
        raise NumericalDegeneracy("first ray is orthogonal or parallel to the plane intersection")
    if c < 0:
        d12, c = -d12, -c
    src = np.array([np.zeros(3), d[0] / c, d12])
    dst = np.array([[0.0, 0.0, -1.0], [math.tan(math.acos(c)), 0.0, 0.0], [0.0, 0.0, 0.0]])
    T = frame_from_three_points(src, dst)
    q = T.rotation @ d[2]
    if abs(q[2]) < TOL.geometric:
        raise NumericalDegeneracy("second line ray parallel to z = 0")
    # q is a direction from C = (0,0,-1): the crossing with z = 0 is C + q / q_z
    a1, b1 = q[0] / q[2], q[1] / q[2]

    M = T.rotation @ attitude.matrix.T
    L1 = lm1.world_endpoints[0]
    L = [lm1.world_endpoints[1] - L1, lm2.world_endpoints[0] - L1, lm2.world_endpoints[1] - L1]
    rows, rhs = [], []
    # first line: its endpoints have y = 0 (the xz plane); L1 sits at the origin
    rows.append([0.0, 0.0, 0.0, 1.0, 0.0])
    rhs.append(0.0)
    cc, sc, kc = _cs_row(M[1], L[0])
    rows.append([cc, sc, 0.0, 1.0, 0.0])
    rhs.append(-kc)
    # second line: plane through the z axis and (a1, b1, 0)
    for Lk in L[1:]:
        cy, sy, ky = _cs_row(M[1], Lk)
        cx, sx, kx = _cs_row(M[0], Lk)
        rows.append([a1 * cy - b1 * cx, a1 * sy - b1 * sx, -b1, a1, 0.0])
        rhs.append(-(a1 * ky - b1 * kx))
    return np.array(rows), np.array(rhs)


def two_lines_constraint_rank(
    lm1: LineMatch, lm2: LineMatch, attitude: Attitude, K: Intrinsics
) -> tuple[int, int]:
    """Rank and nullspace dimension of the two-line constraint matrix."""
    A, _ = two_lines_constraint_system(lm1, lm2, attitude, K)
    sv = np.linalg.svd(A, compute_uv=False)
    rank = int(np.sum(sv > TOL.rank * max(sv[0], 1.0)))
    return rank, A.shape[1] - rank
