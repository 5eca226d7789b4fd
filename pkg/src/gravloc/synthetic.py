"""Synthetic scenes and the accuracy / sensitivity / robustness experiments.

Scene model: points and line endpoints uniform in the cube [-1, 1]^3,
observed by a 640x480 camera with K = (500, 500, 320, 240).  The camera has
uniform yaw, pitch and roll within +-30 degrees, and sits 4-6 units from a
point near the cube centre, looking at it along its optical axis.
"""

from __future__ import annotations

import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .geometry import Attitude, GeometryError, Intrinsics, Pose, rotation_from_ypr
from .matches import LineMatch, MatchSet, PointMatch
from .ransac import (
    InsufficientMatches,
    NoValidHypothesis,
    RansacConfig,
    Strategy,
    line_residuals,
    point_residuals,
    run_ransac,
)
from .refinement import Mode, RefinementError, RefinementProblem, refine

log = logging.getLogger(__name__)

IMAGE_SIZE = (640, 480)
DEFAULT_K = Intrinsics(500.0, 500.0, 320.0, 240.0)
MAX_DRAWS = 10**6
SUCCESS_TRANSLATION_PCT = 10.0
SUCCESS_ROTATION_DEG = 5.0
EXPERIMENTS = ("accuracy", "sensitivity", "robustness")


class GenerationExhausted(RuntimeError):
    pass


class ZeroTruthTranslation(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    n_point_matches: int = 10
    n_line_matches: int = 10
    pixel_noise_sigma: float = 1.0
    attitude_noise_sigma: float = 0.0  # degrees
    outlier_rate: float = 0.0
    trials: int = 200
    ransac: RansacConfig = field(default_factory=RansacConfig)
    seed: int = 0
    # which matches the refinement sees: the RANSAC inliers or the true inliers
    refine_support: str = "ransac"
    min_line_length: float = 0.2
    min_line_pixels: float = 20.0
    camera_distance: tuple = (4.0, 6.0)
    max_tilt_deg: float = 30.0

    def __post_init__(self):
        if self.n_point_matches < 0 or self.n_line_matches < 0:
            raise ValueError("match counts must be non-negative")
        if self.pixel_noise_sigma < 0 or self.attitude_noise_sigma < 0:
            raise ValueError("noise levels must be non-negative")
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ValueError("outlier rate must lie in [0, 1)")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.refine_support not in ("ransac", "truth"):
            raise ValueError("refine_support must be 'ransac' or 'truth'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ransac"]["strategy"] = self.ransac.strategy.value
        d["camera_distance"] = list(self.camera_distance)
        return d


@dataclass(frozen=True)
class Method:
    strategy: Strategy
    refine: Mode | None = None

    @classmethod
    def parse(cls, text: str, default_refine: Mode | None = None) -> Method:
        """``"2p"``, ``"mixed-4dof"``, ``"p3p-none"``..."""
        name, _, suffix = text.strip().lower().partition("-")
        strategy = Strategy.parse(name)
        if not suffix:
            return cls(strategy, default_refine)
        if suffix == "none":
            return cls(strategy, None)
        try:
            return cls(strategy, Mode(suffix))
        except ValueError:
            raise ValueError(f"unknown refinement {suffix!r} in method {text!r}") from None

    @property
    def name(self) -> str:
        return f"{self.strategy.value}-{self.refine.value if self.refine else 'none'}"


@dataclass(frozen=True)
class TrialOutcome:
    translation_error: float  # percent
    rotation_error: float  # degrees
    success: bool
    method: str


# -- scene generation --------------------------------------------------------

def _random_camera(cfg: ScenarioConfig, rng: np.random.Generator) -> Pose:
    tilt = math.radians(cfg.max_tilt_deg)
    yaw = rng.uniform(-math.pi, math.pi)
    att = Attitude(rng.uniform(-tilt, tilt), rng.uniform(-tilt, tilt))
    R = rotation_from_ypr(yaw, att)
    target = rng.uniform(-0.25, 0.25, 3)
    dist = rng.uniform(*cfg.camera_distance)
    return Pose(yaw, att, target - dist * R[:, 2])


def _visible(pose: Pose, X: np.ndarray, K: Intrinsics):
    """Pixels of world points (N, 3), or None if any is behind or outside the image."""
    Xc = pose.to_camera(X)
    if not np.all(Xc[:, 2] > 1e-6):
        return None
    px = K.project(Xc)
    w, h = IMAGE_SIZE
    if np.all((px[:, 0] >= 0) & (px[:, 0] < w) & (px[:, 1] >= 0) & (px[:, 1] < h)):
        return px
    return None


class _Budget:
    def __init__(self, limit: int = MAX_DRAWS):
        self.left = limit

    def take(self):
        self.left -= 1
        if self.left < 0:
            raise GenerationExhausted(f"no valid feature after {MAX_DRAWS} draws")


def _draw_point(pose, K, rng, budget):
    while True:
        budget.take()
        X = rng.uniform(-1.0, 1.0, (1, 3))
        px = _visible(pose, X, K)
        if px is not None:
            return X[0], px[0]


def _draw_line(pose, K, rng, budget, cfg):
    while True:
        budget.take()
        X = rng.uniform(-1.0, 1.0, (2, 3))
        if np.linalg.norm(X[1] - X[0]) < cfg.min_line_length:
            continue
        px = _visible(pose, X, K)
        if px is not None and np.linalg.norm(px[1] - px[0]) >= max(cfg.min_line_pixels, 1.5):
            return X, px


def generate_scene(cfg: ScenarioConfig, rng: np.random.Generator, K: Intrinsics = DEFAULT_K):
    """Random camera and noisy matches; the attitude in the match set is exact."""
    budget = _Budget()
    truth = _random_camera(cfg, rng)
    sigma = cfg.pixel_noise_sigma
    points, lines = [], []
    for _ in range(cfg.n_point_matches):
        X, px = _draw_point(truth, K, rng, budget)
        points.append(PointMatch(px + sigma * rng.standard_normal(2), X))
    for _ in range(cfg.n_line_matches):
        X, px = _draw_line(truth, K, rng, budget, cfg)
        lines.append(LineMatch(px + sigma * rng.standard_normal((2, 2)), X))
    return MatchSet(points, lines, truth.attitude, K), truth


def inject_outliers(
    ms: MatchSet,
    rate: float,
    rng: np.random.Generator,
    truth: Pose,
    threshold: float = 2.0,
    cfg: ScenarioConfig | None = None,
):
    """Append wrong associations until each feature type has the given outlier rate.

    An outlier pairs the world feature of one freshly drawn visible feature
    with the image feature of another, and is redrawn until its residual
    under ``truth`` exceeds ``threshold``.  Returns the new match set and the
    ground-truth inlier masks.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must lie in [0, 1)")
    cfg = cfg or ScenarioConfig()
    K = ms.intrinsics
    budget = _Budget()

    def count(n):
        return int(round(rate * n / (1.0 - rate)))

    new_points = []
    while len(new_points) < count(ms.n_points):
        Xa, _ = _draw_point(truth, K, rng, budget)
        _, pb = _draw_point(truth, K, rng, budget)
        if point_residuals(truth, Xa[None], pb[None], K)[0] > threshold:
            new_points.append(PointMatch(pb, Xa))
    new_lines = []
    while len(new_lines) < count(ms.n_lines):
        Xa, _ = _draw_line(truth, K, rng, budget, cfg)
        _, pb = _draw_line(truth, K, rng, budget, cfg)
        lm = LineMatch(pb, Xa)
        one = MatchSet(lines=[lm], intrinsics=K)
        if line_residuals(truth, one.line_worlds, one.line_coefficients, K)[0] > threshold:
            new_lines.append(lm)
    out = MatchSet(ms.points + tuple(new_points), ms.lines + tuple(new_lines), ms.attitude, K)
    pmask = np.arange(out.n_points) < ms.n_points
    lmask = np.arange(out.n_lines) < ms.n_lines
    return out, pmask, lmask


def perturb_attitude(att: Attitude, sigma_deg: float, rng: np.random.Generator) -> Attitude:
    """Add zero-mean Gaussian noise to pitch and roll.

    Pitch draws that would leave (-90, 90) degrees are redrawn.
    """
    if sigma_deg < 0:
        raise ValueError("sigma must be non-negative")
    if sigma_deg == 0:
        return att
    s = math.radians(sigma_deg)
    while True:
        pitch = att.pitch + s * rng.standard_normal()
        roll = att.roll + s * rng.standard_normal()
        if abs(pitch) < math.pi / 2:
            return Attitude(pitch, roll)


def evaluate_pose(estimate: Pose, truth: Pose) -> tuple[float, float]:
    """Translation error in percent of ``|t_truth|`` and rotation error in degrees."""
    nt = float(np.linalg.norm(truth.translation))
    if nt <= 1e-9:
        raise ZeroTruthTranslation("ground-truth translation is zero")
    t_err = 100.0 * float(np.linalg.norm(estimate.translation - truth.translation)) / nt
    dR = estimate.rotation @ truth.rotation.T
    w = np.array([dR[2, 1] - dR[1, 2], dR[0, 2] - dR[2, 0], dR[1, 0] - dR[0, 1]])
    angle = math.atan2(0.5 * float(np.linalg.norm(w)), 0.5 * (np.trace(dR) - 1.0))
    return t_err, math.degrees(angle)


def is_success(t_err: float, r_err: float) -> bool:
    return t_err < SUCCESS_TRANSLATION_PCT and r_err < SUCCESS_ROTATION_DEG


# -- experiments -------------------------------------------------------------

def _key(text: str) -> int:
    return zlib.crc32(text.encode())


def _level_key(level: float) -> int:
    return _key(repr(float(level)))


def scene_rng(cfg: ScenarioConfig, kind: str, level: float, trial: int) -> np.random.Generator:
    ss = np.random.SeedSequence([cfg.seed & (2**64 - 1), _key(kind), _level_key(level), trial])
    return np.random.Generator(np.random.Philox(ss))


def ransac_seed(cfg: ScenarioConfig, kind: str, level: float, method: Method, trial: int) -> int:
    ss = np.random.SeedSequence([cfg.seed & (2**64 - 1), _key(kind), _level_key(level), _key(method.name), trial])
    return int(ss.generate_state(1, np.uint64)[0])


def level_config(kind: str, level: float, cfg: ScenarioConfig) -> ScenarioConfig:
    if kind == "accuracy":
        return replace(cfg, pixel_noise_sigma=float(level))
    if kind == "sensitivity":
        return replace(cfg, attitude_noise_sigma=float(level))
    if kind == "robustness":
        return replace(cfg, outlier_rate=float(level))
    raise ValueError(f"unknown experiment {kind!r}")


def supports(method: Method, cfg: ScenarioConfig) -> bool:
    """Whether the method can run on the scenario's inlier counts."""
    p, l = cfg.n_point_matches, cfg.n_line_matches
    s = method.strategy
    if s is Strategy.P3P:
        # three points leave the P3P roots ambiguous
        return p >= 4
    if s is Strategy.ONE_POINT_ONE_LINE:
        return p >= 1 and l >= 1
    if s is Strategy.TWO_POINTS:
        return p >= 2
    return p >= 1 and p + l >= 2


def run_trial(kind: str, level: float, method: Method, cfg: ScenarioConfig, trial: int) -> TrialOutcome:
    lcfg = level_config(kind, level, cfg)
    rng = scene_rng(cfg, kind, level, trial)
    ms, truth = generate_scene(lcfg, rng)
    ms = ms.with_attitude(perturb_attitude(truth.attitude, lcfg.attitude_noise_sigma, rng))
    ms, true_p, true_l = inject_outliers(ms, lcfg.outlier_rate, rng, truth, lcfg.ransac.point_threshold, lcfg)

    rcfg = replace(lcfg.ransac, strategy=method.strategy, seed=ransac_seed(cfg, kind, level, method, trial))
    try:
        result = run_ransac(ms, rcfg)
    except (NoValidHypothesis, InsufficientMatches):
        return TrialOutcome(math.nan, math.nan, False, method.name)
    pose = result.pose
    if method.refine is not None:
        if lcfg.refine_support == "truth":
            support = ms.subset(true_p, true_l)
        else:
            support = result.inlier_matches(ms)
        if method.strategy is Strategy.P3P:
            support = support.subset(line_mask=np.zeros(support.n_lines, dtype=bool))
        try:
            pose = refine(RefinementProblem.from_matches(pose, support, method.refine)).pose
        except (RefinementError, GeometryError):
            pass
    t_err, r_err = evaluate_pose(pose, truth)
    return TrialOutcome(t_err, r_err, is_success(t_err, r_err), method.name)


def _run_packed(args):
    return run_trial(*args)


@dataclass(frozen=True)
class ResultRow:
    level: float
    method: str
    trials: int
    success_rate: float
    mean_trans_err_pct: float
    median_trans_err_pct: float
    mean_rot_err_deg: float
    median_rot_err_deg: float


CSV_COLUMNS = tuple(ResultRow.__dataclass_fields__)


def _aggregate(level, method: Method, outcomes: list[TrialOutcome]) -> ResultRow:
    t = np.array([o.translation_error for o in outcomes])
    r = np.array([o.rotation_error for o in outcomes])

    def stat(fn, a):
        a = a[np.isfinite(a)]
        return float(fn(a)) if len(a) else math.nan

    return ResultRow(
        float(level),
        method.name,
        len(outcomes),
        float(np.mean([o.success for o in outcomes])),
        stat(np.mean, t),
        stat(np.median, t),
        stat(np.mean, r),
        stat(np.median, r),
    )


def run_experiment(kind: str, sweep, methods, cfg: ScenarioConfig, jobs: int = 1) -> list[ResultRow]:
    """One row per (level, method), each over ``cfg.trials`` fresh scenes.

    Trials at the same level and index share their scene across methods.
    Results do not depend on ``jobs``.
    """
    if kind not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {kind!r}")
    methods = [m if isinstance(m, Method) else Method.parse(m) for m in methods]
    sweep = [float(x) for x in sweep]
    if not sweep or not methods:
        raise ValueError("sweep and methods must be non-empty")
    plan = []
    for level in sweep:
        lcfg = level_config(kind, level, cfg)
        for m in methods:
            if not supports(m, lcfg):
                log.warning("skipping %s at level %g: too few matches", m.name, level)
                continue
            plan.append((level, m))
    tasks = [(kind, level, m, cfg, i) for level, m in plan for i in range(cfg.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_packed, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        outcomes = [_run_packed(t) for t in tasks]
    rows = []
    for k, (level, m) in enumerate(plan):
        rows.append(_aggregate(level, m, outcomes[k * cfg.trials : (k + 1) * cfg.trials]))
    return rows
