"""Noise-free scene builders shared by the test modules."""

import math

import numpy as np

from gravloc.geometry import Attitude, Intrinsics, Pose
from gravloc.matches import LineMatch, PointMatch

K = Intrinsics(500.0, 500.0, 320.0, 240.0)


def random_pose(rng, tilt=0.5):
    att = Attitude(rng.uniform(-tilt, tilt), rng.uniform(-tilt, tilt))
    yaw = rng.uniform(-math.pi, math.pi)
    R = Pose(yaw, att).rotation
    # look at a point near the origin from 3-6 units away
    centre = rng.uniform(-0.2, 0.2, 3) - rng.uniform(3.0, 6.0) * R[:, 2]
    return Pose(yaw, att, centre)


def project(pose, X, K=K):
    Xc = pose.to_camera(np.atleast_2d(X))
    return K.project(Xc), Xc[:, 2]


def visible_point(pose, rng, K=K):
    while True:
        X = rng.uniform(-1, 1, 3)
        px, z = project(pose, X, K)
        if z[0] > 0.1 and 0 <= px[0, 0] < 640 and 0 <= px[0, 1] < 480:
            return PointMatch(px[0], X)


def visible_line(pose, rng, K=K, min_pixels=20.0):
    while True:
        X = rng.uniform(-1, 1, (2, 3))
        px, z = project(pose, X, K)
        if (
            np.all(z > 0.1)
            and np.all((px >= 0) & (px < [640, 480]))
            and np.linalg.norm(px[1] - px[0]) > min_pixels
            and np.linalg.norm(X[1] - X[0]) > 0.2
        ):
            return LineMatch(px, X)


def yaw_close(a, b, tol):
    return abs(math.remainder(a - b, 2 * math.pi)) < tol


def best_candidate(poses, truth):
    """Candidate closest to ``truth`` with its yaw and translation errors.

    The translation error is relative to ``|t_truth|``, or absolute when that is below 1.
    """
    best = None
    for p in poses:
        dy = abs(math.remainder(p.yaw - truth.yaw, 2 * math.pi))
        dt = np.linalg.norm(p.translation - truth.translation) / max(np.linalg.norm(truth.translation), 1.0)
        if best is None or dy + dt < best[1] + best[2]:
            best = (p, dy, dt)
    return best
