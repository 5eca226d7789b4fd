"""Command-line entry point.

Exit status: 0 on success, 2 on a usage error, 3 on a data error.  Errors are
reported as a single line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .geometry import Attitude
from .matchfile import MatchFileError, parse_match_file, serialize_match_file
from .ransac import (
    InlierStats,
    RansacConfig,
    RansacError,
    Strategy,
    label_segments,
    run_ransac,
    select_strategy,
)
from .refinement import Mode, RefinementError, RefinementProblem, refine
from .synthetic import (
    CSV_COLUMNS,
    GenerationExhausted,
    Method,
    ScenarioConfig,
    evaluate_pose,
    generate_scene,
    inject_outliers,
    perturb_attitude,
    run_experiment,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3

DEFAULT_METHODS = "2p,1p1l,mixed,p3p"
DEFAULT_SWEEPS = {
    "accuracy": "0:2:0.5",
    "sensitivity": "0:25:5",
    "robustness": "0:0.8:0.1",
}
HISTORY_COLUMNS = ("segment", "point_inlier_rate", "line_inlier_rate", "points", "lines")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def parse_sweep(text: str) -> list[float]:
    """``"a:b:step"`` (inclusive of ``b``) or a comma-separated list."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [float(x) for x in text.split(":")]
            if len(parts) != 3:
                raise ValueError
            start, stop, step = parts
            if not step > 0 or stop < start:
                raise ValueError
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            # rounding keeps 0.1 * 3 printing as 0.3
            return [round(start + i * step, 12) for i in range(n)]
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad sweep {text!r}: expected start:stop:step or a comma list") from None
    if not values or not all(math.isfinite(v) for v in values):
        raise UsageError(f"bad sweep {text!r}")
    return values


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_csv(kind: str, rows, header: dict) -> str:
    out = io.StringIO()
    out.write(f"# gravloc {__version__} {kind}\n")
    out.write(f"# seed: {header['config']['seed']}\n")
    out.write("# config: " + json.dumps(header, sort_keys=True) + "\n")
    out.write(",".join(CSV_COLUMNS) + "\n")
    for r in rows:
        out.write(",".join(_fmt(getattr(r, c)) for c in CSV_COLUMNS) + "\n")
    return out.getvalue()


def _write(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    except OSError as e:
        raise DataError(f"cannot write {path}: {e.strerror}") from None


def _read(path: str) -> bytes:
    if path == "-":
        return sys.stdin.buffer.read()
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}") from None


def _ransac_config(args, strategy: Strategy = Strategy.MIXED) -> RansacConfig:
    return RansacConfig(
        iterations=args.iterations,
        point_threshold=args.point_threshold_px,
        line_threshold=args.line_threshold_px,
        seed=args.seed,
        strategy=strategy,
    )


def _refine_mode(text: str) -> Mode | None:
    return None if text == "none" else Mode(text)


# -- subcommands -------------------------------------------------------------

def cmd_experiment(args) -> int:
    kind = args.command
    sweep = parse_sweep(args.sweep if args.sweep is not None else DEFAULT_SWEEPS[kind])
    default_refine = _refine_mode(args.refine)
    try:
        methods = [Method.parse(m, default_refine) for m in args.methods.split(",") if m.strip()]
    except ValueError as e:
        raise UsageError(str(e)) from None
    if not methods:
        raise UsageError("no methods given")
    support = args.refine_support or ("truth" if kind == "sensitivity" else "ransac")
    cfg = ScenarioConfig(
        n_point_matches=args.points,
        n_line_matches=args.lines,
        pixel_noise_sigma=args.pixel_noise_px,
        attitude_noise_sigma=args.attitude_noise_deg,
        outlier_rate=args.outlier_rate,
        trials=args.trials,
        ransac=_ransac_config(args),
        seed=args.seed,
        refine_support=support,
    )
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    rows = run_experiment(kind, sweep, methods, cfg, jobs=args.jobs)
    # --jobs is left out so the bytes do not depend on concurrency
    header = {"experiment": kind, "sweep": sweep, "methods": [m.name for m in methods], "config": cfg.to_dict()}
    _write(format_csv(kind, rows, header), args.out)
    return EXIT_OK


def _history_stats(path: str, counts=None) -> dict:
    """Read a history CSV into ``{segment: [InlierStats, ...]}``."""
    text = _read(path).decode("utf-8", errors="replace")
    reader = csv.DictReader(line for line in io.StringIO(text) if not line.startswith("#"))
    if reader.fieldnames is None or any(c not in reader.fieldnames for c in HISTORY_COLUMNS):
        raise DataError(f"{path}: history needs columns {','.join(HISTORY_COLUMNS)}")
    grouped: dict = {}
    for k, row in enumerate(reader, start=2):
        try:
            stats = InlierStats(
                float(row["point_inlier_rate"]),
                float(row["line_inlier_rate"]),
                int(row["points"]) if counts is None else counts[0],
                int(row["lines"]) if counts is None else counts[1],
            )
        except (TypeError, ValueError) as e:
            raise DataError(f"{path}: row {k}: {e}") from None
        grouped.setdefault(row["segment"], []).append(stats)
    if not grouped:
        raise DataError(f"{path}: history is empty")
    return grouped


def cmd_select_strategy(args) -> int:
    grouped = _history_stats(args.history)
    try:
        labels = label_segments(grouped)
    except RansacError as e:
        raise DataError(str(e)) from None
    out = io.StringIO()
    out.write("segment,strategy,point_inlier_rate,line_inlier_rate\n")
    for seg, strategy in labels.items():
        recs = grouped[seg]
        lam = float(np.mean([r.point_rate for r in recs]))
        gam = float(np.mean([r.line_rate for r in recs]))
        out.write(f"{seg},{strategy.value},{lam!r},{gam!r}\n")
    _write(out.getvalue(), args.out)
    return EXIT_OK


def _auto_strategy(args, ms) -> tuple[Strategy, str]:
    if args.history is not None:
        if args.segment is None:
            raise UsageError("--history with --strategy auto needs --segment")
        grouped = _history_stats(args.history, counts=(ms.n_points, ms.n_lines))
        if args.segment not in grouped:
            raise DataError(f"segment {args.segment!r} not in history")
        recs = grouped[args.segment]
        stats = InlierStats(
            float(np.mean([r.point_rate for r in recs])),
            float(np.mean([r.line_rate for r in recs])),
            ms.n_points,
            ms.n_lines,
        )
        source = f"history segment {args.segment}"
    else:
        # no prior: estimate the inlier rates with a mixed pilot run
        pilot = run_ransac(ms, _ransac_config(args, Strategy.MIXED))
        stats = InlierStats.from_counts(
            int(pilot.point_inlier_mask.sum()), ms.n_points, int(pilot.line_inlier_mask.sum()), ms.n_lines
        )
        source = "pilot run"
    strategy = select_strategy(stats)
    return strategy, f"{source}, point rate {stats.point_rate:.4g}, line rate {stats.line_rate:.4g}"


def cmd_localize(args) -> int:
    ms, gt = parse_match_file(_read(args.input))
    if args.strategy == "auto":
        strategy, why = _auto_strategy(args, ms)
        label = f"{strategy.value} (auto: {why})"
    else:
        strategy = Strategy.parse(args.strategy)
        label = strategy.value
    result = run_ransac(ms, _ransac_config(args, strategy))
    pose = result.pose
    mode = _refine_mode(args.refine)
    if mode is not None:
        support = result.inlier_matches(ms)
        if strategy is Strategy.P3P:
            support = support.subset(line_mask=np.zeros(support.n_lines, dtype=bool))
        try:
            pose = refine(RefinementProblem.from_matches(pose, support, mode)).pose
        except RefinementError as e:
            print(f"warning: refinement skipped: {e}", file=sys.stderr)
    lines = [
        f"strategy: {label}",
        "pose: " + " ".join(format(float(v), ".17g") for v in (pose.yaw, pose.pitch, pose.roll, *pose.translation)),
        f"point_inliers: {int(result.point_inlier_mask.sum())}/{ms.n_points}",
        f"line_inliers: {int(result.line_inlier_mask.sum())}/{ms.n_lines}",
        f"iterations: {result.iterations_run}",
    ]
    if gt is not None:
        t_err, r_err = evaluate_pose(pose, gt)
        lines.append(f"trans_err_pct: {t_err!r}")
        lines.append(f"rot_err_deg: {r_err!r}")
    _write("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_gen_scene(args) -> int:
    cfg = ScenarioConfig(
        n_point_matches=args.points,
        n_line_matches=args.lines,
        pixel_noise_sigma=args.pixel_noise_px,
        attitude_noise_sigma=args.attitude_noise_deg,
        outlier_rate=args.outlier_rate,
        seed=args.seed,
    )
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(args.seed)))
    ms, truth = generate_scene(cfg, rng)
    att: Attitude = perturb_attitude(truth.attitude, cfg.attitude_noise_sigma, rng)
    ms, _, _ = inject_outliers(ms.with_attitude(att), cfg.outlier_rate, rng, truth, cfg.ransac.point_threshold, cfg)
    _write(serialize_match_file(ms, truth), args.out)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _ransac_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=100, help="RANSAC iterations")
    p.add_argument("--point-threshold-px", type=float, default=2.0)
    p.add_argument("--line-threshold-px", type=float, default=2.0)


def _counts_flags(p: argparse.ArgumentParser, default: int) -> None:
    p.add_argument("--points", type=_nonneg_int, default=default, help="point inliers")
    p.add_argument("--lines", type=_nonneg_int, default=default, help="line inliers")
    p.add_argument(
        "--inliers", "--matches", type=_nonneg_int, default=None, dest="inliers",
        help="set both --points and --lines",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gravloc", description="Gravity-aligned point and line localization.")
    parser.add_argument("--version", action="version", version=f"gravloc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sweep_flag = {
        "accuracy": "--pixel-noise-px",
        "sensitivity": "--attitude-noise-deg",
        "robustness": "--outlier-rates",
    }
    for kind in ("accuracy", "sensitivity", "robustness"):
        p = sub.add_parser(kind, help=f"{kind} experiment, CSV output")
        _ransac_flags(p)
        _counts_flags(p, 10)
        p.add_argument("--trials", type=int, default=200)
        p.add_argument("--methods", default=DEFAULT_METHODS, help="comma list, e.g. 2p,mixed-4dof,p3p-none")
        p.add_argument("--refine", choices=("none", "4dof", "6dof"), default="6dof",
                       help="refinement for methods without a suffix")
        p.add_argument("--refine-support", choices=("ransac", "truth"), default=None,
                       help="matches used by refinement (default: truth for sensitivity, else ransac)")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", default=None)
        flag = sweep_flag[kind]
        aliases = [flag, "--pixel-noise"] if kind == "accuracy" else [flag]
        p.add_argument(*aliases, dest="sweep", default=None,
                       help=f"sweep as start:stop:step or list (default {DEFAULT_SWEEPS[kind]})")
        if kind != "accuracy":
            p.add_argument("--pixel-noise-px", "--pixel-noise", dest="pixel_noise_px", type=float, default=1.0)
        else:
            p.set_defaults(pixel_noise_px=1.0)
        if kind != "sensitivity":
            p.add_argument("--attitude-noise-deg", dest="attitude_noise_deg", type=float, default=0.0)
        else:
            p.set_defaults(attitude_noise_deg=0.0)
        if kind != "robustness":
            p.add_argument("--outlier-rate", type=float, default=0.0)
        else:
            p.set_defaults(outlier_rate=0.0)
        p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("localize", help="localize one .m2e match file")
    p.add_argument("--input", required=True, help="path or - for stdin")
    _ransac_flags(p)
    p.add_argument("--strategy", choices=("1p1l", "2p", "mixed", "p3p", "auto"), default="mixed")
    p.add_argument("--refine", choices=("none", "4dof", "6dof"), default="none")
    p.add_argument("--history", default=None, help="history CSV used by --strategy auto")
    p.add_argument("--segment", default=None, help="segment id within --history")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("select-strategy", help="label map segments from an inlier history CSV")
    p.add_argument("--history", required=True, help="CSV with " + ",".join(HISTORY_COLUMNS))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_select_strategy)

    p = sub.add_parser("gen-scene", help="write a synthetic .m2e match file")
    _counts_flags(p, 10)
    p.add_argument("--pixel-noise-px", "--pixel-noise", dest="pixel_noise_px", type=float, default=1.0)
    p.add_argument("--attitude-noise-deg", type=float, default=0.0)
    p.add_argument("--outlier-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gen_scene)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    if getattr(args, "inliers", None) is not None:
        args.points = args.lines = args.inliers
    try:
        return args.func(args)
    except UsageError as e:
        print(f"gravloc: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, MatchFileError, RansacError, RefinementError, GenerationExhausted) as e:
        print(f"gravloc: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        # invalid flag values rejected by the configuration types
        print(f"gravloc: error: {e}", file=sys.stderr)
        return EXIT_USAGE
