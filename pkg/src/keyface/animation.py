"""Keyframe timing, linear interpolation to a fixed frame rate, smoothing, and
Live-Link-style CSV I/O.

CSV dialect (pinned): header ``Timecode,BlendShapeCount,<61 names>``; each row
holds a ``HH:MM:SS:FF.mmm`` timecode, the literal 61, then 61 values with six
decimals. ``FF`` is the frame within the second and ``mmm`` the sub-frame in
thousandths. LF line endings, UTF-8.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import NUM_CHANNELS, CoeffVector, MotionKeyframeSet, registry, validate_coeffs
from .errors import (
    BadWindow,
    HeaderMismatch,
    LengthMismatch,
    NonMonotoneTimes,
    RowParse,
    WrongDimension,
)

DEFAULT_FPS = 60.0
DEFAULT_INTERVAL = 1.0
_GRID_TOL = 1e-9


@dataclass(frozen=True)
class TimedKeyframe:
    time: float
    coeffs: CoeffVector

    def __post_init__(self):
        if not math.isfinite(self.time) or self.time < 0:
            raise ValueError(f"keyframe time must be finite and >= 0, got {self.time!r}")


@dataclass(frozen=True)
class FrameSequence:
    frames: tuple[CoeffVector, ...]
    fps: float = DEFAULT_FPS
    start_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not (self.fps > 0 and math.isfinite(self.fps)):
            raise ValueError(f"fps must be > 0, got {self.fps!r}")
        if not self.frames:
            raise ValueError("frame sequence must be non-empty")

    def __len__(self):
        return len(self.frames)

    def array(self) -> np.ndarray:
        return np.array([f.values for f in self.frames], dtype=np.float64)

    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.frames)) / self.fps

    def to_dict(self) -> dict:
        return {"fps": self.fps, "start_time": self.start_time,
                "frames": [list(f.values) for f in self.frames]}

    @classmethod
    def from_dict(cls, obj) -> "FrameSequence":
        return cls(tuple(validate_coeffs(f) for f in obj["frames"]),
                   float(obj.get("fps", DEFAULT_FPS)), float(obj.get("start_time", 0.0)))

    @classmethod
    def from_array(cls, arr, fps=DEFAULT_FPS, start_time=0.0) -> "FrameSequence":
        return cls(tuple(CoeffVector(tuple(float(x) for x in row)) for row in np.asarray(arr)),
                   fps, start_time)


def assign_timing(ks: MotionKeyframeSet | Sequence[CoeffVector], interval: float | None = None,
                  times: Sequence[float] | None = None) -> list[TimedKeyframe]:
    """Uniform spacing (``interval`` seconds, default 1.0) or explicit ``times``."""
    frames = ks.frames if isinstance(ks, MotionKeyframeSet) else tuple(ks)
    if times is not None:
        times = [float(t) for t in times]
        if len(times) != len(frames):
            raise LengthMismatch(f"{len(times)} times given for {len(frames)} keyframes")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise NonMonotoneTimes(f"keyframe times must be strictly increasing: {times}")
    else:
        d = DEFAULT_INTERVAL if interval is None else float(interval)
        if not d > 0:
            raise NonMonotoneTimes(f"uniform interval must be > 0, got {d}")
        times = [i * d for i in range(len(frames))]
    return [TimedKeyframe(t, f) for t, f in zip(times, frames)]


def interpolate_linear(tks: Sequence[TimedKeyframe], fps: float = DEFAULT_FPS) -> FrameSequence:
    """Sample every channel on the grid start, start+1/fps, ... up to the last key time.

    Grid points that coincide with a keyframe time return that keyframe exactly.
    """
    if not tks:
        raise ValueError("need at least one timed keyframe")
    if not fps > 0:
        raise ValueError("fps must be > 0")
    times = np.array([k.time for k in tks], dtype=np.float64)
    if np.any(np.diff(times) <= 0):
        raise NonMonotoneTimes("keyframe times must be strictly increasing")
    keys = np.array([k.coeffs.values for k in tks], dtype=np.float64)
    start = float(times[0])
    span = float(times[-1] - start)
    count = int(math.floor(span * fps + _GRID_TOL)) + 1

    out = []
    seg = 0
    for n in range(count):
        t = start + n / fps
        while seg < len(times) - 2 and t > times[seg + 1] + _GRID_TOL:
            seg += 1
        hit = np.flatnonzero(np.abs(times - t) <= _GRID_TOL)
        if hit.size:
            out.append(tks[int(hit[0])].coeffs)
            continue
        t0, t1 = times[seg], times[seg + 1]
        v0, v1 = keys[seg], keys[seg + 1]
        v = v0 + (v1 - v0) * ((t - t0) / (t1 - t0))
        # guard rounding: stay inside the bracketing keyframe values
        v = np.clip(v, np.minimum(v0, v1), np.maximum(v0, v1))
        out.append(CoeffVector(tuple(v.tolist())))
    return FrameSequence(tuple(out), float(fps), start)


def smooth_moving_average(seq: FrameSequence, window: int) -> FrameSequence:
    """Centered per-channel moving average; the window shrinks at the edges."""
    n = len(seq)
    if isinstance(window, bool) or not isinstance(window, int) or window < 1 or window % 2 == 0 or window > n:
        raise BadWindow(f"window must be an odd integer in [1, {n}], got {window!r}")
    if window == 1:
        return seq
    half = window // 2
    arr = seq.array()
    csum = np.vstack([np.zeros((1, NUM_CHANNELS)), np.cumsum(arr, axis=0)])
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + half, n - 1) + 1
    sm = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    sm = np.clip(sm, -1.0, 1.0)
    return FrameSequence(tuple(CoeffVector(tuple(row)) for row in sm.tolist()), seq.fps, seq.start_time)


# -- Live Link CSV ------------------------------------------------------------

def format_timecode(t: float, fps: float) -> str:
    total_ms = int(round(t * fps * 1000))  # in thousandths of a frame
    per_sec = fps * 1000
    secs = int(total_ms // per_sec)
    rem = total_ms - secs * per_sec
    ff, mmm = divmod(int(round(rem)), 1000)
    h, rest = divmod(secs, 3600)
    m, s = divmod(rest, 60)
    return f"{h:02d}:{m:02d}:{s:02d}:{ff:02d}.{mmm:03d}"


def parse_timecode(tc: str) -> tuple[int, float]:
    """Return (whole seconds, frame-within-second incl. fraction)."""
    parts = tc.strip().split(":")
    if len(parts) != 4:
        raise ValueError(f"bad timecode {tc!r}")
    h, m, s = (int(p) for p in parts[:3])
    frame = float(parts[3])
    if min(h, m, s) < 0 or m > 59 or s > 59 or frame < 0:
        raise ValueError(f"bad timecode {tc!r}")
    return h * 3600 + m * 60 + s, frame


def export_livelink_csv(seq: FrameSequence) -> bytes:
    names = registry().names
    buf = io.StringIO()
    buf.write(",".join(("Timecode", "BlendShapeCount") + names) + "\n")
    for n, frame in enumerate(seq.frames):
        tc = format_timecode(seq.start_time + n / seq.fps, seq.fps)
        vals = ",".join(f"{v:.6f}" for v in frame.values)
        buf.write(f"{tc},{NUM_CHANNELS},{vals}\n")
    return buf.getvalue().encode("utf-8")


def _infer_fps(stamps: list[tuple[int, float]]) -> float:
    # Frame counters wrap at the frame rate; the largest counter seen before a
    # seconds rollover gives it. Without a rollover fall back to the default.
    wraps = [prev[1] for prev, cur in zip(stamps, stamps[1:]) if cur[0] > prev[0]]
    if wraps:
        step = stamps[1][1] - stamps[0][1] if stamps[1][0] == stamps[0][0] else 1.0
        return float(round(max(wraps) + step))
    return DEFAULT_FPS


def import_livelink_csv(data: bytes | str, fps: float | None = None) -> FrameSequence:
    """Parse the pinned CSV dialect; ``fps`` overrides inference from timecodes."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise HeaderMismatch("empty CSV")
    expected = ["Timecode", "BlendShapeCount", *registry().names]
    header = [h.strip() for h in rows[0]]
    if header != expected:
        extra = [h for h in header if h not in expected]
        missing = [h for h in expected if h not in header]
        raise HeaderMismatch(
            f"header does not match registry order (missing={missing[:5]}, unexpected={extra[:5]})"
        )
    if len(rows) < 2:
        raise RowParse(2, "no data rows")
    stamps, frames = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(expected):
            raise WrongDimension(f"row {lineno}: expected {len(expected)} fields, got {len(row)}")
        try:
            stamps.append(parse_timecode(row[0]))
            count = int(row[1])
            values = [float(x) for x in row[2:]]
        except ValueError as exc:
            raise RowParse(lineno, str(exc)) from None
        if count != NUM_CHANNELS:
            raise WrongDimension(f"row {lineno}: BlendShapeCount is {count}, expected {NUM_CHANNELS}")
        try:
            frames.append(validate_coeffs(values))
        except ValueError as exc:
            raise RowParse(lineno, str(exc)) from None
    if fps is None:
        fps = _infer_fps(stamps)
    sec0, frame0 = stamps[0]
    return FrameSequence(tuple(frames), float(fps), sec0 + frame0 / fps)


def save_sequence(seq: FrameSequence, path, fmt: str | None = None) -> None:
    fmt = fmt or ("csv" if str(path).lower().endswith(".csv") else "json")
    if fmt == "csv":
        with open(path, "wb") as fh:
            fh.write(export_livelink_csv(seq))
    else:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(seq.to_dict(), fh)
            fh.write("\n")
