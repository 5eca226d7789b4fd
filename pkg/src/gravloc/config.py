"""Numerical tolerances shared across the package."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    orthonormal: float = 1e-12
    geometric: float = 1e-9
    gimbal_lock: float = 1e-9
    # elimination pivots below this are treated as singular
    pivot: float = 1e-10
    # 1P1L degeneracy: point-to-line distance in map units / pixels
    degenerate_world: float = 1e-6
    degenerate_pixel: float = 0.5
    # negative discriminants closer to zero than this (relative) are clamped
    discriminant: float = 1e-12
    rank: float = 1e-9


TOL = Tolerances()
