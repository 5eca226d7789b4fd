"""Gravity-aligned 4DoF camera localization from point and line matches."""

from .geometry import Attitude, Intrinsics, Pose
from .matches import LineMatch, MatchSet, PointMatch
from .matchfile import parse_match_file, serialize_match_file
from .p3p import solve_p3p
from .ransac import InlierStats, RansacConfig, Strategy, run_ransac, select_strategy, success_probability
from .refinement import Mode, RefinementProblem, refine
from .solvers import solve_1p1l, solve_2p, two_lines_constraint_rank

__version__ = "0.1.0"

__all__ = [
    "Attitude",
    "InlierStats",
    "Intrinsics",
    "LineMatch",
    "MatchSet",
    "Mode",
    "PointMatch",
    "Pose",
    "RansacConfig",
    "RefinementProblem",
    "Strategy",
    "parse_match_file",
    "refine",
    "run_ransac",
    "select_strategy",
    "serialize_match_file",
    "solve_1p1l",
    "solve_2p",
    "solve_p3p",
    "success_probability",
    "two_lines_constraint_rank",
]
