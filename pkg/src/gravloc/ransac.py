"""2-entity RANSAC over mixed point and line matches."""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .geometry import Intrinsics, Pose
from .matches import LineMatch, MatchSet, PointMatch
from .p3p import solve_p3p
from .solvers import SolverError, SolverOutput, solve_1p1l, solve_2p


class RansacError(ValueError):
    pass


class InsufficientMatches(RansacError):
    pass


class NoValidHypothesis(RansacError):
    pass


class DomainError(RansacError):
    pass


class EmptyHistory(RansacError):
    pass


class Strategy(enum.Enum):
    ONE_POINT_ONE_LINE = "1p1l"
    TWO_POINTS = "2p"
    MIXED = "mixed"
    # conventional point-only baseline, never chosen by select_strategy
    P3P = "p3p"

    @classmethod
    def parse(cls, name: str) -> Strategy:
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown strategy {name!r}") from None


TWO_ENTITY = (Strategy.ONE_POINT_ONE_LINE, Strategy.TWO_POINTS, Strategy.MIXED)


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 100
    point_threshold: float = 2.0
    line_threshold: float = 2.0
    seed: int = 0
    strategy: Strategy = Strategy.MIXED
    # confidence-based early stopping; off by default
    adaptive: bool = False
    confidence: float = 0.99

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not (self.point_threshold > 0 and self.line_threshold > 0):
            raise ValueError("thresholds must be positive")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")


@dataclass(eq=False)
class RansacResult:
    pose: Pose
    point_inlier_mask: np.ndarray
    line_inlier_mask: np.ndarray
    best_score: int
    iterations_run: int
    strategy: Strategy
    seed: int
    residual_sum: float = 0.0
    # how many draws went to each solver and how many failed
    draws: dict = field(default_factory=dict)

    def inlier_matches(self, ms: MatchSet) -> MatchSet:
        return ms.subset(self.point_inlier_mask, self.line_inlier_mask)


@dataclass(frozen=True)
class InlierStats:
    point_rate: float
    line_rate: float
    n_points: int
    n_lines: int

    def __post_init__(self):
        if not (0.0 <= self.point_rate <= 1.0 and 0.0 <= self.line_rate <= 1.0):
            raise DomainError("inlier rates must lie in [0, 1]")
        if self.n_points < 0 or self.n_lines < 0:
            raise DomainError("counts must be non-negative")

    @property
    def point_inliers(self) -> int:
        return round(self.point_rate * self.n_points)

    @property
    def line_inliers(self) -> int:
        return round(self.line_rate * self.n_lines)

    @classmethod
    def from_counts(cls, m: int, p: int, n: int, l: int) -> InlierStats:
        return cls(m / p if p else 0.0, n / l if l else 0.0, p, l)


# -- residuals ---------------------------------------------------------------

def point_residuals(pose: Pose, worlds: np.ndarray, pixels: np.ndarray, K: Intrinsics) -> np.ndarray:
    """Pixel reprojection distance per point; +inf behind the camera."""
    if len(worlds) == 0:
        return np.zeros(0)
    Xc = pose.to_camera(worlds)
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        du = K.fx * Xc[:, 0] / z + K.cx - pixels[:, 0]
        dv = K.fy * Xc[:, 1] / z + K.cy - pixels[:, 1]
        r = np.hypot(du, dv)
    r[~(z > 0)] = np.inf
    return r


def line_residuals(pose: Pose, worlds: np.ndarray, coefficients: np.ndarray, K: Intrinsics) -> np.ndarray:
    """Larger of the two endpoint distances to the measured image line."""
    if len(worlds) == 0:
        return np.zeros(0)
    Xc = pose.to_camera(worlds.reshape(-1, 3)).reshape(-1, 2, 3)
    z = Xc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * Xc[..., 0] / z + K.cx
        v = K.fy * Xc[..., 1] / z + K.cy
        d = np.abs(coefficients[:, None, 0] * u + coefficients[:, None, 1] * v + coefficients[:, None, 2])
        r = d.max(axis=1)
    r[~np.all(z > 0, axis=1)] = np.inf
    return r


def point_residual(pose: Pose, pm: PointMatch, K: Intrinsics) -> float:
    return float(point_residuals(pose, pm.world[None], pm.pixel[None], K)[0])


def line_residual(pose: Pose, lm: LineMatch, K: Intrinsics) -> float:
    ms = MatchSet(lines=[lm], intrinsics=K)
    return float(line_residuals(pose, ms.line_worlds, ms.line_coefficients, K)[0])


# -- sampling ----------------------------------------------------------------

def _check_counts(p: int, l: int, strategy: Strategy) -> None:
    ok = {
        Strategy.ONE_POINT_ONE_LINE: p >= 1 and l >= 1,
        Strategy.TWO_POINTS: p >= 2,
        Strategy.MIXED: p >= 1 and p + l >= 2,
        Strategy.P3P: p >= 3,
    }[strategy]
    if not ok:
        raise InsufficientMatches(f"{strategy.value} cannot sample from {p} points and {l} lines")


def draw_sample(p: int, l: int, strategy: Strategy, rng: np.random.Generator) -> tuple:
    """Index draw without replacement; entries are ``("point", i)`` or ``("line", j)``."""
    _check_counts(p, l, strategy)
    if strategy is Strategy.ONE_POINT_ONE_LINE:
        return ("point", int(rng.integers(p))), ("line", int(rng.integers(l)))
    if strategy is Strategy.P3P:
        return tuple(("point", int(i)) for i in rng.choice(p, 3, replace=False))
    i = int(rng.integers(p))
    if strategy is Strategy.TWO_POINTS:
        j = int(rng.integers(p - 1))
        return ("point", i), ("point", j + (j >= i))
    k = int(rng.integers(p - 1 + l))
    if k < p - 1:
        return ("point", i), ("point", k + (k >= i))
    return ("point", i), ("line", k - (p - 1))


def solve_sample(ms: MatchSet, entities: tuple) -> SolverOutput:
    kinds = tuple(kind for kind, _ in entities)
    feats = [ms.points[i] if kind == "point" else ms.lines[i] for kind, i in entities]
    if kinds == ("point", "line"):
        return solve_1p1l(feats[0], feats[1], ms.attitude, ms.intrinsics)
    if kinds == ("point", "point"):
        return solve_2p(feats[0], feats[1], ms.attitude, ms.intrinsics)
    if kinds == ("point", "point", "point"):
        return solve_p3p(*feats, ms.intrinsics)
    raise ValueError(f"no solver for sample {kinds}")


def sample_hypothesis(ms: MatchSet, strategy: Strategy, rng: np.random.Generator) -> tuple[tuple, SolverOutput]:
    entities = draw_sample(ms.n_points, ms.n_lines, strategy, rng)
    return entities, solve_sample(ms, entities)


def iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    """Independent counter-based stream for one RANSAC iteration."""
    return np.random.Generator(np.random.Philox(key=seed & (2**64 - 1), counter=[0, 0, 0, iteration]))


# -- main loop ---------------------------------------------------------------

def score_pose(pose: Pose, ms: MatchSet, cfg: RansacConfig, use_lines: bool = True):
    rp = point_residuals(pose, ms.point_worlds, ms.point_pixels, ms.intrinsics)
    pmask = rp < cfg.point_threshold
    if use_lines:
        rl = line_residuals(pose, ms.line_worlds, ms.line_coefficients, ms.intrinsics)
        lmask = rl < cfg.line_threshold
        total = float(rp[pmask].sum() + rl[lmask].sum())
    else:
        lmask = np.zeros(ms.n_lines, dtype=bool)
        total = float(rp[pmask].sum())
    return int(pmask.sum() + lmask.sum()), total, pmask, lmask


def _required_iterations(prob: float, confidence: float) -> float:
    if prob <= 0.0:
        return math.inf
    if prob >= 1.0:
        return 1.0
    return math.log(1.0 - confidence) / math.log(1.0 - prob)


def run_ransac(ms: MatchSet, cfg: RansacConfig) -> RansacResult:
    """Fixed-iteration RANSAC; every solver root is scored as its own hypothesis.

    Hypotheses are ranked by inlier count, then by the summed residual of
    their inliers, then by draw order.  Each iteration draws from its own
    stream derived from ``cfg.seed``, so the outcome does not depend on the
    order in which iterations are evaluated.
    """
    strategy = cfg.strategy
    _check_counts(ms.n_points, ms.n_lines, strategy)
    use_lines = strategy is not Strategy.P3P
    best = None
    draws = defaultdict(int)
    it = 0
    while it < cfg.iterations:
        rng = iteration_rng(cfg.seed, it)
        it += 1
        entities = draw_sample(ms.n_points, ms.n_lines, strategy, rng)
        kind = "+".join(k for k, _ in entities)
        draws[kind] += 1
        try:
            out = solve_sample(ms, entities)
        except SolverError:
            draws["failed"] += 1
            continue
        improved = False
        for pose in out.poses:
            score, total, pmask, lmask = score_pose(pose, ms, cfg, use_lines)
            if best is None or score > best[0] or (score == best[0] and total < best[1]):
                best = (score, total, pmask, lmask, pose)
                improved = True
        if cfg.adaptive and improved:
            stats = InlierStats.from_counts(int(best[2].sum()), ms.n_points, int(best[3].sum()), ms.n_lines)
            try:
                prob = success_probability(stats, strategy)
            except DomainError:
                prob = 0.0
            if it >= _required_iterations(prob, cfg.confidence):
                break
    if best is None:
        raise NoValidHypothesis(f"all {it} draws were degenerate or unsolvable")
    score, total, pmask, lmask, pose = best
    return RansacResult(pose, pmask, lmask, score, it, strategy, cfg.seed, total, dict(draws))


# -- sampling model ----------------------------------------------------------

def success_probability(stats: InlierStats, strategy: Strategy) -> float:
    """Chance that one draw of ``strategy`` contains only inliers."""
    lam, gam = stats.point_rate, stats.line_rate
    p, l = stats.n_points, stats.n_lines
    if strategy is Strategy.ONE_POINT_ONE_LINE:
        if p < 1 or l < 1:
            raise DomainError("1P1L needs at least one point and one line")
        prob = lam * gam
    elif strategy is Strategy.TWO_POINTS:
        if p < 2:
            raise DomainError("2P needs at least two points")
        prob = lam * (lam * p - 1) / (p - 1)
    elif strategy is Strategy.MIXED:
        if p < 1 or p + l < 2:
            raise DomainError("mixed sampling needs a point and two features")
        prob = lam * (lam * p + gam * l - 1) / (p + l - 1)
    else:
        if p < 3:
            raise DomainError("P3P needs at least three points")
        prob = lam * (lam * p - 1) / (p - 1) * (lam * p - 2) / (p - 2)
    return min(1.0, max(0.0, prob))


def select_strategy(stats: InlierStats, tie_tol: float = 1e-12) -> Strategy:
    """Strategy with the highest all-inlier draw probability; ties go to mixed."""
    probs = {}
    for s in TWO_ENTITY:
        try:
            probs[s] = success_probability(stats, s)
        except DomainError:
            continue
    if not probs:
        raise DomainError("no strategy is applicable to these counts")
    top = max(probs.values())
    winners = [s for s, v in probs.items() if v >= top - tie_tol]
    return Strategy.MIXED if Strategy.MIXED in winners else winners[0]


def label_segments(history: Iterable | Mapping) -> dict:
    """Pick a strategy per map segment from its averaged inlier statistics.

    ``history`` is either an iterable of ``(segment_id, InlierStats)`` pairs
    or a mapping from segment id to a list of ``InlierStats``.
    """
    grouped: dict = {}
    if isinstance(history, Mapping):
        for seg, records in history.items():
            grouped[seg] = list(records)
    else:
        for seg, stats in history:
            grouped.setdefault(seg, []).append(stats)
    if not grouped:
        raise EmptyHistory("no segments in history")
    labels = {}
    for seg, records in grouped.items():
        if not records:
            raise EmptyHistory(f"segment {seg!r} has no records")
        avg = InlierStats(
            float(np.mean([r.point_rate for r in records])),
            float(np.mean([r.line_rate for r in records])),
            round(float(np.mean([r.n_points for r in records]))),
            round(float(np.mean([r.n_lines for r in records]))),
        )
        labels[seg] = select_strategy(avg)
    return labels
