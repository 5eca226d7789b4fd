import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from gravloc.geometry import Attitude, Intrinsics, Pose, ProjectionRay, pixel_to_ray
from gravloc.matches import LineMatch, PointMatch
from gravloc.solvers import (
    Degenerate,
    DuplicateMatch,
    IllConditioned,
    NoRealSolution,
    ParallelRays,
    SolverError,
    check_degeneracy_1p1l,
    intermediate_frame_1p1l,
    solve_1p1l,
    solve_2p,
    solve_trig,
    two_lines_constraint_rank,
    two_lines_constraint_system,
)

from scenes import K, best_candidate, project, random_pose, visible_line, visible_point

seeds = st.integers(0, 2**32 - 1)


def skew(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


def grid_yaw_minima(attitude, point_rays, point_worlds, plane_normals, line_worlds, step=1e-4):
    """Local minima over a yaw grid of the smallest singular value of the
    linear system in the camera centre; the true yaw makes it vanish."""
    yaw = np.arange(-math.pi, math.pi, step)
    c, s = np.cos(yaw), np.sin(yaw)
    Rz = np.zeros((len(yaw), 3, 3))
    Rz[:, 0, 0], Rz[:, 0, 1], Rz[:, 1, 0], Rz[:, 1, 1], Rz[:, 2, 2] = c, -s, s, c, 1
    Rt = np.transpose(Rz @ attitude.matrix, (0, 2, 1))
    rows = []
    for d, P in zip(point_rays, point_worlds):
        S = skew(d) @ Rt
        rows.append(np.concatenate([-S, (S @ P)[:, :, None]], axis=2))
    for n, L in zip(plane_normals, line_worlds):
        for X in L:
            r = n @ Rt
            rows.append(np.concatenate([-r, (r @ X)[:, None]], axis=1)[:, None, :])
    sv = np.linalg.svd(np.concatenate(rows, axis=1), compute_uv=False)[:, -1]
    loc = np.where((sv < np.roll(sv, 1)) & (sv <= np.roll(sv, -1)))[0]
    return yaw[loc], sv[loc]


def constraint_residuals_1p1l(pose, pm, lm):
    """Collinearity of the point ray and coplanarity of both line endpoints."""
    d1 = pixel_to_ray(K, pm.pixel).direction
    d2, d3 = (pixel_to_ray(K, p).direction for p in lm.pixel_endpoints)
    n = np.cross(d2, d3)
    n /= np.linalg.norm(n)
    Xp = pose.to_camera(pm.world)
    out = list(np.cross(d1, Xp / np.linalg.norm(Xp)))
    for X in pose.to_camera(lm.world_endpoints):
        out.append(n @ X / np.linalg.norm(X))
    return np.abs(out)


def constraint_residuals_2p(pose, pm1, pm2):
    out = []
    for pm in (pm1, pm2):
        d = pixel_to_ray(K, pm.pixel).direction
        X = pose.to_camera(pm.world)
        out.extend(np.cross(d, X / np.linalg.norm(X)))
    return np.abs(out)


def spec_scene():
    """World features and the 4DoF pose (yaw 0.4, pitch 0.05, roll -0.1) with
    world-to-camera translation (0.1, 0.2, 2.0)."""
    att = Attitude(0.05, -0.1)
    R = Pose(0.4, att).rotation
    truth = Pose.from_world_to_camera(R.T, [0.1, 0.2, 2.0], att)
    P1 = np.array([0.2, -0.1, 0.4])
    L = np.array([[-0.3, 0.2, 0.1], [0.5, 0.4, -0.2]])
    pm = PointMatch(project(truth, P1)[0][0], P1)
    lm = LineMatch(project(truth, L)[0], L)
    return truth, pm, lm


def random_1p1l(seed):
    rng = np.random.default_rng(seed)
    truth = random_pose(rng)
    pm, lm = visible_point(truth, rng), visible_line(truth, rng)
    return truth, pm, lm


def random_2p(seed):
    rng = np.random.default_rng(seed)
    truth = random_pose(rng)
    return truth, visible_point(truth, rng), visible_point(truth, rng)


class TestSolveTrig:
    def test_two_roots(self):
        roots = sorted(solve_trig(1.0, 1.0, -1.0))
        np.testing.assert_allclose(roots, [0.0, math.pi / 2], atol=1e-15)

    def test_homogeneous(self):
        roots = sorted(solve_trig(3.0, 4.0, 0.0))
        np.testing.assert_allclose(roots, sorted([math.atan2(-3, 4), math.atan2(-3, 4) + math.pi]), atol=1e-15)

    def test_root_at_pi(self):
        assert solve_trig(1.0, 0.0, 1.0) == [math.pi]

    def test_double_root_at_zero(self):
        assert solve_trig(-1.0, 0.0, 1.0) == [0.0]

    def test_no_real_root(self):
        with pytest.raises(NoRealSolution):
            solve_trig(1.0, 0.0, 2.0)

    def test_no_yaw_dependence(self):
        with pytest.raises(IllConditioned):
            solve_trig(0.0, 0.0, 1.0)

    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-15, 15))
    def test_roots_satisfy_equation(self, A, B, C):
        r = math.hypot(A, B)
        assume(r > 1e-6)
        assume(abs(r - abs(C)) > 1e-9 * r)
        if abs(C) > r:
            with pytest.raises(NoRealSolution):
                solve_trig(A, B, C)
            return
        roots = solve_trig(A, B, C)
        assert len(roots) == 2
        for x in roots:
            assert -math.pi < x <= math.pi
            assert abs(A * math.cos(x) + B * math.sin(x) + C) < 1e-11 * (r + abs(C))


class TestIntermediateFrame:
    def test_example(self):
        th = phi = 0.3
        d1 = ProjectionRay(np.array([0, math.sin(phi), math.cos(phi)]))
        d2 = ProjectionRay(np.array([0.0, 0.0, 1.0]))
        d3 = ProjectionRay(np.array([math.sin(th), 0, math.cos(th)]))
        T, (a1, b1), x3 = intermediate_frame_1p1l(d1, d2, d3)
        assert x3 == pytest.approx(0.30933624960962325, abs=1e-15)
        assert x3 == pytest.approx(0.309336, abs=1e-6)
        np.testing.assert_allclose(T.apply(np.zeros(3)), [0, 0, -1], atol=1e-12)
        np.testing.assert_allclose(T.apply(d2.direction), [0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(T.apply(d3.direction / math.cos(th)), [x3, 0, 0], atol=1e-12)
        # the point ray meets z = 0 at (a1, b1, 0)
        q = T.apply(d1.direction / (T.rotation @ d1.direction)[2])
        np.testing.assert_allclose(q, [a1, b1, 0.0], atol=1e-10)

    @settings(max_examples=200)
    @given(seeds)
    def test_conditions(self, seed):
        rng = np.random.default_rng(seed)
        d = [ProjectionRay(np.array([*rng.uniform(-0.6, 0.6, 2), 1.0])) for _ in range(3)]
        T, (a1, b1), x3 = intermediate_frame_1p1l(*d)
        c23 = d[1].direction @ d[2].direction
        np.testing.assert_allclose(T.apply(np.zeros(3)), [0, 0, -1], atol=1e-12)
        np.testing.assert_allclose(T.apply(d[1].direction), 0, atol=1e-12)
        np.testing.assert_allclose(T.apply(d[2].direction / c23), [x3, 0, 0], atol=1e-10)
        assert x3 == pytest.approx(math.tan(math.acos(c23)), rel=1e-12)
        r1 = T.rotation @ d[0].direction
        np.testing.assert_allclose(np.array([0, 0, -1]) + r1 / r1[2], [a1, b1, 0], atol=1e-10)

    def test_parallel_rays(self):
        d = ProjectionRay(np.array([0.1, 0.2, 1.0]))
        with pytest.raises(ParallelRays):
            intermediate_frame_1p1l(ProjectionRay(np.array([0.0, 0.0, 1.0])), d, d)


class TestDegeneracy:
    line = LineMatch([[100.0, 100.0], [300.0, 100.0]], [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])

    def test_midpoint(self):
        assert check_degeneracy_1p1l(PointMatch([200, 150], [0.5, 0.0, 0.0]), self.line)

    def test_half_unit_away(self):
        assert not check_degeneracy_1p1l(PointMatch([200, 150], [0.5, 0.5, 0.0]), self.line)

    def test_world_threshold(self):
        assert check_degeneracy_1p1l(PointMatch([200, 150], [0.5, 1e-7, 0.0]), self.line)
        assert not check_degeneracy_1p1l(PointMatch([200, 150], [0.5, 1e-5, 0.0]), self.line)

    def test_pixel_threshold(self):
        assert check_degeneracy_1p1l(PointMatch([200, 100.4], [0.5, 0.5, 0.0]), self.line)
        assert not check_degeneracy_1p1l(PointMatch([200, 100.6], [0.5, 0.5, 0.0]), self.line)


class TestSolve1P1L:
    def test_example_scene(self):
        truth, pm, lm = spec_scene()
        assert pm.pixel == pytest.approx([367.13567349, 237.95858126], abs=1e-6)
        out = solve_1p1l(pm, lm, truth.attitude, K)
        assert len(out) == 2
        _, dy, dt = best_candidate(out, truth)
        assert dy < 1e-7 and dt < 1e-7
        # frozen second root of the example
        assert sorted(p.yaw for p in out)[0] == pytest.approx(-2.988925, abs=1e-5)

    def test_example_roots_match_grid_search(self):
        truth, pm, lm = spec_scene()
        out = solve_1p1l(pm, lm, truth.attitude, K)
        d1 = pixel_to_ray(K, pm.pixel).direction
        d2, d3 = (pixel_to_ray(K, p).direction for p in lm.pixel_endpoints)
        n = np.cross(d2, d3)
        yaws, sv = grid_yaw_minima(truth.attitude, [d1], [pm.world], [n / np.linalg.norm(n)], [lm.world_endpoints])
        deep = yaws[sv < 1e-3]
        assert len(deep) == len(out)
        for p in out:
            assert np.min(np.abs(np.remainder(deep - p.yaw + math.pi, 2 * math.pi) - math.pi)) < 1e-4

    def test_identity_pose(self):
        att = Attitude(0.0, 0.0)
        truth = Pose(0.0, att, np.zeros(3))
        P = np.array([0.3, -0.2, 3.0])
        L = np.array([[-0.5, 0.4, 2.5], [0.6, 0.5, 4.0]])
        pm = PointMatch(project(truth, P)[0][0], P)
        lm = LineMatch(project(truth, L)[0], L)
        p, dy, _ = best_candidate(solve_1p1l(pm, lm, att, K), truth)
        assert dy < 1e-9
        np.testing.assert_allclose(p.translation, 0, atol=1e-9)

    def test_point_on_line(self):
        truth, _, lm = spec_scene()
        X = lm.world_endpoints.mean(axis=0)
        pm = PointMatch(project(truth, X)[0][0], X)
        with pytest.raises(Degenerate):
            solve_1p1l(pm, lm, truth.attitude, K)

    @settings(max_examples=300, deadline=None)
    @given(seeds)
    def test_recovery_and_self_consistency(self, seed):
        truth, pm, lm = random_1p1l(seed)
        try:
            out = solve_1p1l(pm, lm, truth.attitude, K)
        except Degenerate:
            assume(False)
        _, dy, dt = best_candidate(out, truth)
        assert dy < 1e-7 and dt < 1e-7
        for p in out:
            assert p.attitude is truth.attitude
            assert np.max(constraint_residuals_1p1l(p, pm, lm)) < 1e-8

    @settings(max_examples=100, deadline=None)
    @given(seeds)
    def test_endpoint_swap_invariance(self, seed):
        truth, pm, lm = random_1p1l(seed)
        try:
            a = solve_1p1l(pm, lm, truth.attitude, K)
        except Degenerate:
            assume(False)
        b = solve_1p1l(pm, lm.reversed(), truth.attitude, K)
        assert len(a) == len(b)
        for p in a:
            q, dy, _ = best_candidate(b, p)
            assert dy < 1e-10
            np.testing.assert_allclose(q.translation, p.translation, atol=1e-10)


class TestSolve2P:
    def test_identity_pose(self):
        att = Attitude(0.0, 0.0)
        truth = Pose(0.0, att, np.zeros(3))
        P = np.array([[0.2, 0.1, 1.0], [-0.3, 0.2, 2.0]])
        px = project(truth, P)[0]
        out = solve_2p(PointMatch(px[0], P[0]), PointMatch(px[1], P[1]), att, K)
        p, dy, _ = best_candidate(out, truth)
        assert dy < 1e-12
        np.testing.assert_allclose(p.translation, 0, atol=1e-12)

    def test_points_on_optical_axis_are_degenerate(self):
        # both points project to the principal point, so yaw is unobservable
        att = Attitude(0.0, 0.0)
        P = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 2.0]])
        with pytest.raises(Degenerate):
            solve_2p(PointMatch([320, 240], P[0]), PointMatch([320, 240], P[1]), att, K)

    def test_duplicate(self):
        pm = PointMatch([100.0, 200.0], [0.1, 0.2, 0.3])
        with pytest.raises(DuplicateMatch):
            solve_2p(pm, pm, Attitude(0.0, 0.0), K)

    def test_roots_match_grid_search(self):
        truth, pm1, pm2 = random_2p(11)
        out = solve_2p(pm1, pm2, truth.attitude, K)
        rays = [pixel_to_ray(K, pm.pixel).direction for pm in (pm1, pm2)]
        yaws, sv = grid_yaw_minima(truth.attitude, rays, [pm1.world, pm2.world], [], [])
        deep = yaws[sv < 1e-3]
        assert len(deep) == len(out)
        for p in out:
            assert np.min(np.abs(np.remainder(deep - p.yaw + math.pi, 2 * math.pi) - math.pi)) < 1e-4

    def test_zero_horizontal_image_coordinate(self):
        # the second point at the principal column, u = cx
        att = Attitude(0.1, -0.05)
        truth = Pose(0.7, att, [0.5, -3.0, 0.2])
        cam = np.array([[0.3, -0.1, 3.0], [0.0, 0.2, 2.5]])
        P = truth.camera_to_world().apply(cam)
        px = project(truth, P)[0]
        assert px[1, 0] == pytest.approx(320.0, abs=1e-9)
        _, dy, dt = best_candidate(solve_2p(PointMatch(px[0], P[0]), PointMatch(px[1], P[1]), att, K), truth)
        assert dy < 1e-9 and dt < 1e-9

    @settings(max_examples=300, deadline=None)
    @given(seeds)
    def test_recovery_and_self_consistency(self, seed):
        truth, pm1, pm2 = random_2p(seed)
        try:
            out = solve_2p(pm1, pm2, truth.attitude, K)
        except SolverError:
            assume(False)
        _, dy, dt = best_candidate(out, truth)
        assert dy < 1e-7 and dt < 1e-7
        for p in out:
            assert p.attitude is truth.attitude
            assert np.max(constraint_residuals_2p(p, pm1, pm2)) < 1e-8

    @settings(max_examples=100, deadline=None)
    @given(seeds)
    def test_swap_invariance(self, seed):
        truth, pm1, pm2 = random_2p(seed)
        try:
            a = solve_2p(pm1, pm2, truth.attitude, K)
        except SolverError:
            assume(False)
        b = solve_2p(pm2, pm1, truth.attitude, K)
        assert len(a) == len(b)
        for p in a:
            q, dy, _ = best_candidate(b, p)
            assert dy < 1e-10
            np.testing.assert_allclose(q.translation, p.translation, atol=1e-10)


class TestTwoLines:
    def lines(self, seed):
        rng = np.random.default_rng(seed)
        truth = random_pose(rng)
        return truth, visible_line(truth, rng), visible_line(truth, rng)

    def test_first_row_fixes_t2(self):
        truth, l1, l2 = self.lines(0)
        A, b = two_lines_constraint_system(l1, l2, truth.attitude, K)
        np.testing.assert_array_equal(A[0], [0, 0, 0, 1, 0])
        assert b[0] == 0.0

    @pytest.mark.parametrize("seed", range(20))
    def test_rank_deficient(self, seed):
        truth, l1, l2 = self.lines(seed)
        rank, null = two_lines_constraint_rank(l1, l2, truth.attitude, K)
        assert null >= 1
        assert rank + null == 5

    @pytest.mark.parametrize("seed", range(10))
    def test_consistent_at_true_yaw_for_any_t3(self, seed):
        truth, l1, l2 = self.lines(seed)
        A, b = two_lines_constraint_system(l1, l2, truth.attitude, K)
        x_rot = np.array([math.cos(truth.yaw), math.sin(truth.yaw)])
        rest = b - A[:, :2] @ x_rot
        tr, *_ = np.linalg.lstsq(A[:, 2:4], rest, rcond=None)
        assert np.max(np.abs(A[:, 2:4] @ tr - rest)) < 1e-9 * max(1.0, np.max(np.abs(A)))
        np.testing.assert_array_equal(A[:, 4], 0.0)
