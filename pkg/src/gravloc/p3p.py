"""Full 6DoF perspective-three-point baseline (Grunert's quartic)."""

from __future__ import annotations

import math

import numpy as np

from .config import TOL
from .geometry import GimbalLock, Intrinsics, Pose, pixel_to_ray
from .matches import PointMatch
from .solvers import DuplicateMatch, NoRealSolution, SolverError, SolverOutput


class CollinearPoints(SolverError):
    pass


def _quartic_roots(coeffs: np.ndarray) -> list[float]:
    roots = np.roots(coeffs)
    scale = max(1.0, float(np.max(np.abs(roots)))) if len(roots) else 1.0
    real = [float(r.real) for r in roots if abs(r.imag) <= 1e-6 * scale]
    out = []
    dp = np.polyder(coeffs)
    for v in real:
        # polish, np.roots loses digits on clustered roots; near a double
        # root f' vanishes, so only steps that shrink |f| are kept
        f = np.polyval(coeffs, v)
        for _ in range(3):
            d = np.polyval(dp, v)
            if d == 0.0 or f == 0.0:
                break
            cand = v - f / d
            fc = np.polyval(coeffs, cand)
            if not abs(fc) < abs(f):
                break
            v, f = cand, fc
        if all(abs(v - w) > 1e-12 * max(1.0, abs(v)) for w in out):
            out.append(v)
    return out


def _align(world: np.ndarray, cam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation and translation with ``cam ~ R @ world + t``."""
    mw, mc = world.mean(axis=0), cam.mean(axis=0)
    H = (world - mw).T @ (cam - mc)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return R, mc - R @ mw


def _polish_depths(s: np.ndarray, cosines: np.ndarray, d2: np.ndarray) -> np.ndarray:
    """Newton steps on ``s_i^2 + s_j^2 - 2 s_i s_j cos_ij = d_ij^2`` for pairs (1,2), (0,2), (0,1)."""
    pairs = ((1, 2), (0, 2), (0, 1))
    for _ in range(4):
        F = np.empty(3)
        J = np.zeros((3, 3))
        for k, (i, j) in enumerate(pairs):
            F[k] = s[i] ** 2 + s[j] ** 2 - 2 * s[i] * s[j] * cosines[k] - d2[k]
            J[k, i] = 2 * s[i] - 2 * s[j] * cosines[k]
            J[k, j] = 2 * s[j] - 2 * s[i] * cosines[k]
        try:
            step = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            break
        s = s - step
        if np.max(np.abs(step)) <= 1e-15 * np.max(np.abs(s)):
            break
    return s


def solve_p3p(pm1: PointMatch, pm2: PointMatch, pm3: PointMatch, K: Intrinsics) -> SolverOutput:
    """Up to four camera poses from three point matches; attitude is not used."""
    P = np.array([pm1.world, pm2.world, pm3.world])
    px = np.array([pm1.pixel, pm2.pixel, pm3.pixel])
    scale = max(np.linalg.norm(P[1] - P[0]), np.linalg.norm(P[2] - P[0]), 1e-300)
    if np.linalg.norm(np.cross(P[1] - P[0], P[2] - P[0])) < TOL.geometric * scale * scale:
        raise CollinearPoints("world points are collinear")
    for i, j in ((0, 1), (0, 2), (1, 2)):
        if np.linalg.norm(px[i] - px[j]) < TOL.geometric:
            raise DuplicateMatch("pixels coincide")
    f = np.array([pixel_to_ray(K, p).direction for p in px])

    a2 = float(np.sum((P[1] - P[2]) ** 2))
    b2 = float(np.sum((P[0] - P[2]) ** 2))
    c2 = float(np.sum((P[0] - P[1]) ** 2))
    ca, cb, cg = float(f[1] @ f[2]), float(f[0] @ f[2]), float(f[0] @ f[1])
    q = (a2 - c2) / b2
    p = (a2 + c2) / b2
    coeffs = np.array([
        (q - 1) ** 2 - 4 * c2 / b2 * ca**2,
        4 * (q * (1 - q) * cb - (1 - p) * ca * cg + 2 * c2 / b2 * ca**2 * cb),
        2 * (q**2 - 1 + 2 * q**2 * cb**2 + 2 * (b2 - c2) / b2 * ca**2
             - 4 * p * ca * cb * cg + 2 * (b2 - a2) / b2 * cg**2),
        4 * (-q * (1 + q) * cb + 2 * a2 / b2 * cg**2 * cb - (1 - p) * ca * cg),
        (1 + q) ** 2 - 4 * a2 / b2 * cg**2,
    ])
    # distances to the points are s1, u*s1, v*s1
    out = SolverOutput(conditioning=math.inf)
    for v in _quartic_roots(coeffs):
        if v <= 0:
            continue
        s1sq_den = 1 + v**2 - 2 * v * cb
        if s1sq_den <= 0:
            continue
        s1sq = b2 / s1sq_den
        den = 2 * (cg - v * ca)
        out.conditioning = min(out.conditioning, abs(den))
        if abs(den) >= TOL.pivot:
            us = [((-1 + q) * v**2 - 2 * q * cb * v + 1 + q) / den]
        else:
            # symmetric configurations: take u from the c^2 equation instead
            disc = cg**2 - 1 + c2 / s1sq
            if disc < 0:
                continue
            us = [cg + math.sqrt(disc), cg - math.sqrt(disc)]
            us = [u for u in us if abs(s1sq * (u**2 + v**2 - 2 * u * v * ca) - a2) <= 1e-6 * a2]
        for u in us:
            if u <= 0:
                continue
            s1 = math.sqrt(s1sq)
            depths = _polish_depths(np.array([s1, u * s1, v * s1]), np.array([ca, cb, cg]), np.array([a2, b2, c2]))
            if np.any(depths <= 0):
                continue
            cam = f * depths[:, None]
            R, t = _align(P, cam)
            try:
                out.poses.append(Pose.from_world_to_camera(R, t))
            except GimbalLock:
                continue
    if not out.poses:
        raise NoRealSolution("quartic has no admissible root")
    return out
