"""3D-2D feature matches and the per-frame match set."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geometry import Attitude, GeometryError, Intrinsics


def _vec(x, n: int, what: str) -> np.ndarray:
    a = np.array(x, dtype=float).reshape(-1)
    if a.shape != (n,) or not np.all(np.isfinite(a)):
        raise GeometryError(f"{what} must be a finite {n}-vector")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointMatch:
    pixel: np.ndarray
    world: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pixel", _vec(self.pixel, 2, "pixel"))
        object.__setattr__(self, "world", _vec(self.world, 3, "world point"))

    def __eq__(self, other):
        return (
            isinstance(other, PointMatch)
            and np.array_equal(self.pixel, other.pixel)
            and np.array_equal(self.world, other.world)
        )


@dataclass(frozen=True, eq=False)
class LineMatch:
    """A measured image segment and the 3D segment it corresponds to."""

    pixel_endpoints: np.ndarray
    world_endpoints: np.ndarray

    MIN_PIXEL_LENGTH = 1.0
    MIN_WORLD_LENGTH = 1e-6

    def __post_init__(self):
        px = np.array(self.pixel_endpoints, dtype=float)
        w = np.array(self.world_endpoints, dtype=float)
        if px.shape != (2, 2) or w.shape != (2, 3):
            raise GeometryError("line needs two pixel and two world endpoints")
        if not (np.all(np.isfinite(px)) and np.all(np.isfinite(w))):
            raise GeometryError("line endpoints must be finite")
        if not np.linalg.norm(px[1] - px[0]) > self.MIN_PIXEL_LENGTH:
            raise GeometryError("image segment shorter than 1 pixel")
        if not np.linalg.norm(w[1] - w[0]) > self.MIN_WORLD_LENGTH:
            raise GeometryError("world segment endpoints coincide")
        px.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "pixel_endpoints", px)
        object.__setattr__(self, "world_endpoints", w)

    def reversed(self) -> LineMatch:
        return LineMatch(self.pixel_endpoints[::-1], self.world_endpoints[::-1])

    def __eq__(self, other):
        return (
            isinstance(other, LineMatch)
            and np.array_equal(self.pixel_endpoints, other.pixel_endpoints)
            and np.array_equal(self.world_endpoints, other.world_endpoints)
        )


@dataclass(frozen=True, eq=False)
class MatchSet:
    points: tuple = ()
    lines: tuple = ()
    attitude: Attitude = field(default_factory=lambda: Attitude(0.0, 0.0))
    intrinsics: Intrinsics = field(default_factory=lambda: Intrinsics(500.0, 500.0, 320.0, 240.0))

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "lines", tuple(self.lines))

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    # stacked arrays for vectorized scoring
    @cached_property
    def point_pixels(self) -> np.ndarray:
        return np.array([p.pixel for p in self.points], dtype=float).reshape(-1, 2)

    @cached_property
    def point_worlds(self) -> np.ndarray:
        return np.array([p.world for p in self.points], dtype=float).reshape(-1, 3)

    @cached_property
    def line_pixels(self) -> np.ndarray:
        return np.array([m.pixel_endpoints for m in self.lines], dtype=float).reshape(-1, 2, 2)

    @cached_property
    def line_worlds(self) -> np.ndarray:
        return np.array([m.world_endpoints for m in self.lines], dtype=float).reshape(-1, 2, 3)

    @cached_property
    def line_coefficients(self) -> np.ndarray:
        """Image lines ``(a, b, c)`` with ``a^2 + b^2 = 1`` through each measured segment."""
        px = self.line_pixels
        if len(px) == 0:
            return np.zeros((0, 3))
        h0 = np.concatenate([px[:, 0], np.ones((len(px), 1))], axis=1)
        h1 = np.concatenate([px[:, 1], np.ones((len(px), 1))], axis=1)
        ln = np.cross(h0, h1)
        return ln / np.linalg.norm(ln[:, :2], axis=1, keepdims=True)

    def with_attitude(self, attitude: Attitude) -> MatchSet:
        return MatchSet(self.points, self.lines, attitude, self.intrinsics)

    def subset(self, point_mask=None, line_mask=None) -> MatchSet:
        pts = self.points if point_mask is None else [p for p, k in zip(self.points, point_mask) if k]
        lns = self.lines if line_mask is None else [m for m, k in zip(self.lines, line_mask) if k]
        return MatchSet(pts, lns, self.attitude, self.intrinsics)

    def __eq__(self, other):
        return (
            isinstance(other, MatchSet)
            and self.points == other.points
            and self.lines == other.lines
            and self.attitude == other.attitude
            and self.intrinsics == other.intrinsics
        )
