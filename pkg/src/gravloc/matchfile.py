"""Reader and writer for ``.m2e`` match files.

Grammar (one record per line, fields separated by spaces or tabs)::

    # m2e v1                       first line, required
    K fx fy cx cy                  exactly once
    ATT pitch roll                 exactly once, radians
    GT yaw pitch roll tx ty tz     at most once; t is the camera centre
    P u v X Y Z                    any number
    L u1 v1 u2 v2 X1 Y1 Z1 X2 Y2 Z2  any number

After the header, empty lines and lines starting with ``#`` are ignored.
Records may appear in any order; the writer emits the canonical order
K, ATT, GT, P..., L... with 17 significant digits and LF line endings.
A trailing CR on each line is tolerated when reading.
"""

from __future__ import annotations

import math
import re
from typing import NamedTuple

from .geometry import Attitude, GeometryError, Intrinsics, Pose
from .matches import LineMatch, MatchSet, PointMatch

HEADER = "# m2e v1"

_ARITY = {"K": 4, "ATT": 2, "GT": 6, "P": 5, "L": 10}
_TOKEN = re.compile(r"[^ \t]+")
_NUMBER = re.compile(r"[+-]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?")
_NONFINITE = re.compile(r"[+-]?(?:inf|infinity|nan)", re.IGNORECASE)


class MatchFileError(ValueError):
    """Base class for every error raised by :func:`parse_match_file`."""


class MatchFileSyntaxError(MatchFileError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class MissingRecord(MatchFileError):
    pass


class DuplicateRecord(MatchFileError):
    def __init__(self, tag: str, line: int, first: int):
        super().__init__(f"line {line}: duplicate {tag} record (first on line {first})")
        self.tag = tag
        self.line = line


class NonFiniteValue(MatchFileSyntaxError):
    pass


class MatchFile(NamedTuple):
    matches: MatchSet
    ground_truth: Pose | None


def _decode(data) -> str:
    if isinstance(data, str):
        return data
    if not isinstance(data, (bytes, bytearray, memoryview)):
        return data.read() if hasattr(data, "read") else str(data)
    raw = bytes(data)
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as e:
        head = raw[: e.start]
        line = head.count(b"\n") + 1
        column = e.start - (head.rfind(b"\n") + 1) + 1
        raise MatchFileSyntaxError("invalid UTF-8", line, column) from None


def _number(tok: str, line: int, column: int) -> float:
    if _NUMBER.fullmatch(tok):
        v = float(tok)
        if math.isfinite(v):
            return v
        raise NonFiniteValue(f"{tok!r} overflows to a non-finite value", line, column)
    if _NONFINITE.fullmatch(tok):
        raise NonFiniteValue(f"non-finite value {tok!r}", line, column)
    raise MatchFileSyntaxError(f"not a number: {tok[:32]!r}", line, column)


def parse_match_file(source) -> MatchFile:
    """Parse text, bytes or a readable stream into ``(MatchSet, ground truth or None)``."""
    text = _decode(source)
    lines = text.split("\n")
    if lines[0].rstrip("\r") != HEADER:
        first = lines[0].rstrip("\r")
        if first.startswith("# m2e "):
            raise MatchFileSyntaxError(f"unsupported version {first[6:][:16]!r}", 1, 7)
        raise MatchFileSyntaxError(f"expected header {HEADER!r}", 1, 1)

    seen: dict[str, int] = {}
    singles: dict[str, list[float]] = {}
    points, lines_out = [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        if raw.endswith("\r"):
            raw = raw[:-1]
        if not raw.strip(" \t") or raw.startswith("#"):
            continue
        toks = [(m.group(), m.start() + 1) for m in _TOKEN.finditer(raw)]
        tag, tag_col = toks[0]
        if tag not in _ARITY:
            raise MatchFileSyntaxError(f"unknown record tag {tag[:16]!r}", lineno, tag_col)
        fields = toks[1:]
        if len(fields) != _ARITY[tag]:
            col = fields[_ARITY[tag]][1] if len(fields) > _ARITY[tag] else len(raw) + 1
            raise MatchFileSyntaxError(
                f"{tag} takes {_ARITY[tag]} values, got {len(fields)}", lineno, col
            )
        vals = [_number(t, lineno, c) for t, c in fields]
        try:
            if tag == "P":
                points.append(PointMatch(vals[0:2], vals[2:5]))
            elif tag == "L":
                lines_out.append(LineMatch([vals[0:2], vals[2:4]], [vals[4:7], vals[7:10]]))
            else:
                if tag in seen:
                    raise DuplicateRecord(tag, lineno, seen[tag])
                seen[tag] = lineno
                singles[tag] = vals
                if tag == "K":
                    Intrinsics(*vals)
                elif tag == "ATT":
                    Attitude(*vals)
                else:
                    Attitude(vals[1], vals[2])
        except GeometryError as e:
            raise MatchFileSyntaxError(f"invalid {tag} record: {e}", lineno, tag_col) from None

    for tag in ("K", "ATT"):
        if tag not in singles:
            raise MissingRecord(f"no {tag} record")
    K = Intrinsics(*singles["K"])
    att = Attitude(*singles["ATT"])
    gt = None
    if "GT" in singles:
        g = singles["GT"]
        gt = Pose(g[0], Attitude(g[1], g[2]), g[3:6])
    return MatchFile(MatchSet(points, lines_out, att, K), gt)


def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in values)


def serialize_match_file(ms: MatchSet, gt: Pose | None = None) -> str:
    """Canonical text form of a match set and optional ground-truth pose."""
    K = ms.intrinsics
    out = [HEADER, "K " + _fmt((K.fx, K.fy, K.cx, K.cy)), "ATT " + _fmt((ms.attitude.pitch, ms.attitude.roll))]
    if gt is not None:
        out.append("GT " + _fmt((gt.yaw, gt.pitch, gt.roll, *gt.translation)))
    for p in ms.points:
        out.append("P " + _fmt((*p.pixel, *p.world)))
    for m in ms.lines:
        out.append("L " + _fmt((*m.pixel_endpoints.ravel(), *m.world_endpoints.ravel())))
    return "\n".join(out) + "\n"
