"""Least-squares pose polishing over an inlier set.

The objective is the sum of squared pixel residuals: two reprojection
components per point, and for each line the signed distances of both
projected world endpoints to the measured image line.  ``FOUR_DOF`` keeps
pitch and roll fixed at the given attitude; ``SIX_DOF`` frees them.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geometry import Attitude, GeometryError, Intrinsics, Pose, rot_x, rot_y, rot_z
from .matches import MatchSet


class RefinementError(ValueError):
    pass


class SingularNormalEquations(RefinementError):
    pass


class Mode(enum.Enum):
    FOUR_DOF = "4dof"
    SIX_DOF = "6dof"


# residual assigned to features behind the camera
BEHIND_CAMERA_RESIDUAL = 1e6
MAX_ITERATIONS = 100
MAX_DAMPING = 1e16


@dataclass(frozen=True, eq=False)
class RefinementProblem:
    initial: Pose
    points: tuple
    lines: tuple
    mode: Mode
    intrinsics: Intrinsics

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "lines", tuple(self.lines))
        if len(self.points) + len(self.lines) < 2:
            raise RefinementError("refinement needs at least two features")
        ms = MatchSet(self.points, self.lines, self.initial.attitude, self.intrinsics)
        object.__setattr__(self, "_ms", ms)

    @classmethod
    def from_matches(cls, initial: Pose, ms: MatchSet, mode: Mode) -> RefinementProblem:
        return cls(initial, ms.points, ms.lines, mode, ms.intrinsics)

    @property
    def n_params(self) -> int:
        return 4 if self.mode is Mode.FOUR_DOF else 6


@dataclass(frozen=True, eq=False)
class RefinementReport:
    pose: Pose
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    # cost after each accepted step, starting with the initial cost
    history: tuple = ()


def _params(pose: Pose, mode: Mode) -> np.ndarray:
    if mode is Mode.FOUR_DOF:
        return np.array([pose.yaw, *pose.translation])
    return np.array([pose.yaw, pose.pitch, pose.roll, *pose.translation])


def _pose(theta: np.ndarray, problem: RefinementProblem) -> Pose:
    if problem.mode is Mode.FOUR_DOF:
        return Pose(theta[0], problem.initial.attitude, theta[1:4])
    return Pose(theta[0], Attitude(theta[1], theta[2]), theta[3:6])


def _d_rot(a: float, axis: str) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    if axis == "x":
        return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])
    if axis == "y":
        return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def _evaluate(pose: Pose, problem: RefinementProblem, with_jacobian: bool):
    """Residuals, Jacobian (or None) and a cheirality flag."""
    ms = problem._ms
    K = problem.intrinsics
    n_p, n_l = ms.n_points, ms.n_lines
    X = np.concatenate([ms.point_worlds, ms.line_worlds.reshape(-1, 3)])
    R = pose.rotation
    D = X - pose.translation
    Xc = D @ R
    x, y, z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    in_front = bool(np.all(z > 0))
    zs = np.where(z > 0, z, 1.0)
    u = K.fx * x / zs + K.cx
    v = K.fy * y / zs + K.cy

    r = np.empty(2 * n_p + 2 * n_l)
    r[0 : 2 * n_p : 2] = u[:n_p] - ms.point_pixels[:, 0]
    r[1 : 2 * n_p : 2] = v[:n_p] - ms.point_pixels[:, 1]
    coef = np.repeat(ms.line_coefficients, 2, axis=0)
    r[2 * n_p :] = coef[:, 0] * u[n_p:] + coef[:, 1] * v[n_p:] + coef[:, 2]
    if not in_front:
        bad = np.repeat(~(z > 0)[:n_p], 2)
        r[: 2 * n_p][bad] = BEHIND_CAMERA_RESIDUAL
        r[2 * n_p :][~(z > 0)[n_p:]] = BEHIND_CAMERA_RESIDUAL
    if not with_jacobian:
        return r, None, in_front

    # dXc/dparam, shape (N, 3, k)
    Rz, Ry, Rx = rot_z(pose.yaw), rot_y(pose.pitch), rot_x(pose.roll)
    cols = [D @ (_d_rot(pose.yaw, "z") @ Ry @ Rx)]
    if problem.mode is Mode.SIX_DOF:
        cols.append(D @ (Rz @ _d_rot(pose.pitch, "y") @ Rx))
        cols.append(D @ (Rz @ Ry @ _d_rot(pose.roll, "x")))
    dX = np.stack(cols, axis=2)
    dX = np.concatenate([dX, np.broadcast_to(-R.T, (len(X), 3, 3))], axis=2)
    du = K.fx * (dX[:, 0, :] / zs[:, None] - (x / zs**2)[:, None] * dX[:, 2, :])
    dv = K.fy * (dX[:, 1, :] / zs[:, None] - (y / zs**2)[:, None] * dX[:, 2, :])

    J = np.empty((len(r), dX.shape[2]))
    J[0 : 2 * n_p : 2] = du[:n_p]
    J[1 : 2 * n_p : 2] = dv[:n_p]
    J[2 * n_p :] = coef[:, 0:1] * du[n_p:] + coef[:, 1:2] * dv[n_p:]
    return r, J, in_front


def residual_vector(pose: Pose, problem: RefinementProblem) -> np.ndarray:
    """Points first (u, v per point), then lines (one distance per endpoint)."""
    return _evaluate(pose, problem, False)[0]


def jacobian(pose: Pose, problem: RefinementProblem) -> np.ndarray:
    """Analytic derivative of :func:`residual_vector` w.r.t. the mode's parameters,
    ordered (yaw, [pitch, roll,] tx, ty, tz)."""
    return _evaluate(pose, problem, True)[1]


def refine(problem: RefinementProblem) -> RefinementReport:
    """Levenberg-Marquardt descent on the squared residual norm."""
    mode = problem.mode
    pose = problem.initial
    theta = _params(pose, mode)
    r, J, _ = _evaluate(pose, problem, True)
    cost = float(r @ r)
    initial_cost = cost
    history = [cost]
    mu = 1e-4
    converged = False
    iterations = 0
    while iterations < MAX_ITERATIONS:
        g = J.T @ r
        if cost == 0.0 or np.linalg.norm(g) < 1e-10:
            converged = True
            break
        H = J.T @ J
        dH = np.diag(np.diag(H))
        if np.any(np.diag(H) <= 0.0):
            raise SingularNormalEquations("Jacobian has a zero column")
        accepted = solved = False
        while mu <= MAX_DAMPING:
            try:
                step = np.linalg.solve(H + mu * dH, -g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            if not np.all(np.isfinite(step)):
                mu *= 10.0
                continue
            solved = True
            try:
                cand = _pose(theta + step, problem)
            except GeometryError:
                mu *= 10.0
                continue
            r_new, _, in_front = _evaluate(cand, problem, False)
            cost_new = float(r_new @ r_new)
            if in_front and cost_new < cost:
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            if not solved:
                raise SingularNormalEquations("damped normal equations could not be solved")
            # no damping level decreases the cost: a minimum to machine precision
            converged = True
            break
        iterations += 1
        decrease = (cost - cost_new) / cost
        theta = _params(cand, mode)
        pose = cand
        r, J, _ = _evaluate(pose, problem, True)
        cost = cost_new
        history.append(cost)
        mu = max(mu * 0.1, 1e-12)
        if decrease < 1e-10:
            converged = True
            break
    return RefinementReport(pose, initial_cost, cost, iterations, converged, tuple(history))
