"""Sensor-derived features and their correlation against pose error.

Per-frame image metrics (brightness, contrast, entropy, Laplacian variance),
a segment-test corner count standing in for SLAM keypoint counts, IMU
component magnitudes in a (right, up, front) body frame, window aggregation
onto an error series, and Pearson correlation reports.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadAxisMapError,
    ConstantInputError,
    InsufficientDataError,
    NoOverlapError,
    TooSmallError,
)
from .io import GrayImage, read_gray_image
from .metrics import ErrorSeries

__all__ = [
    "FrameFeatures",
    "ImuFeatures",
    "FeatureTable",
    "CorrelationEntry",
    "CorrelationReport",
    "image_metrics",
    "fast_corners",
    "imu_features",
    "aggregate_to_windows",
    "pearson",
    "correlation_report",
    "frame_features_from_files",
    "write_frame_features",
    "read_frame_features",
    "DEFAULT_AXIS_MAP",
    "FRAME_FEATURE_COLUMNS",
    "IMU_FEATURE_COLUMNS",
]

DEFAULT_AXIS_MAP = {"right": "+x", "up": "+y", "front": "-z"}
FRAME_FEATURE_COLUMNS = ("brightness", "contrast", "entropy", "laplacian_var", "keypoints")
IMU_FEATURE_COLUMNS = ("acc_right", "acc_up", "acc_front",
                       "angvel_pitch", "angvel_yaw", "angvel_roll")
GRAVITY = 9.81


@dataclass(frozen=True)
class FrameFeatures:
    """Image statistics for one captured frame."""

    timestamp: float
    brightness: float
    contrast: float
    entropy: float
    laplacian_var: float
    keypoints: int


@dataclass(frozen=True)
class ImuFeatures:
    """Component magnitudes of one IMU sample in the (right, up, front) frame."""

    timestamp: float
    acc_right: float
    acc_up: float
    acc_front: float
    angvel_pitch: float
    angvel_yaw: float
    angvel_roll: float


class FeatureTable:
    """Columnar per-timestamp scalar features."""

    def __init__(self, timestamps, columns: dict):
        self.timestamps = np.asarray(timestamps, dtype=float).reshape(-1)
        self.columns = {str(k): np.asarray(v, dtype=float).reshape(-1) for k, v in columns.items()}
        for name, col in self.columns.items():
            if col.size != self.timestamps.size:
                raise ValueError(f"column {name!r} length mismatch")
        if self.timestamps.size and np.any(np.diff(self.timestamps) < 0.0):
            raise ValueError("timestamps must be non-decreasing")

    def __len__(self) -> int:
        return int(self.timestamps.size)

    @classmethod
    def from_frame_features(cls, features) -> "FeatureTable":
        features = list(features)
        return cls(
            [f.timestamp for f in features],
            {name: [getattr(f, name) for f in features] for name in FRAME_FEATURE_COLUMNS},
        )

    @classmethod
    def from_imu_features(cls, features) -> "FeatureTable":
        features = list(features)
        return cls(
            [f.timestamp for f in features],
            {name: [getattr(f, name) for f in features] for name in IMU_FEATURE_COLUMNS},
        )


@dataclass(frozen=True)
class CorrelationEntry:
    """Pearson r of one feature against the error series (r is None when the
    feature was constant over the paired windows)."""

    name: str
    r: float | None
    n: int
    note: str = ""


@dataclass
class CorrelationReport:
    entries: list[CorrelationEntry]

    def to_dict(self) -> dict:
        return {
            "features": [
                {"name": e.name, "r": e.r, "n": e.n, **({"note": e.note} if e.note else {})}
                for e in self.entries
            ]
        }

    def by_name(self) -> dict:
        return {e.name: e for e in self.entries}


# ---------------------------------------------------------------------------
# image metrics
# ---------------------------------------------------------------------------

def image_metrics(img: GrayImage):
    """(brightness, contrast, entropy, laplacian_var) of a grayscale image.

    brightness: mean intensity. contrast: population standard deviation.
    entropy: Shannon entropy in bits over the 256-bin histogram. laplacian_var:
    variance of the 4-neighbor Laplacian response on interior pixels.
    """
    if img.width < 3 or img.height < 3:
        raise TooSmallError(f"image {img.width}x{img.height} smaller than 3x3")
    px = img.pixels.astype(np.float64)
    brightness = float(px.mean())
    contrast = float(px.std())
    counts = np.bincount(img.pixels.reshape(-1), minlength=256)
    p = counts[counts > 0] / img.pixels.size
    entropy = float(-np.sum(p * np.log2(p))) + 0.0  # fold -0.0 into 0.0
    lap = (px[:-2, 1:-1] + px[2:, 1:-1] + px[1:-1, :-2] + px[1:-1, 2:]
           - 4.0 * px[1:-1, 1:-1])
    laplacian_var = float(lap.var())
    return brightness, contrast, entropy, laplacian_var


# FAST-9 ring: 16 (row, col) offsets at radius 3, clockwise from 12 o'clock
_RING = (
    (-3, 0), (-3, 1), (-2, 2), (-1, 3), (0, 3), (1, 3), (2, 2), (3, 1),
    (3, 0), (3, -1), (2, -2), (1, -3), (0, -3), (-1, -3), (-2, -2), (-3, -1),
)
_ARC = 9


def fast_corners(img: GrayImage, threshold: int = 20, nonmax: bool = True) -> int:
    """Count segment-test corners: a pixel is a corner when 9 contiguous ring
    pixels are all brighter than center+threshold or all darker than
    center-threshold. The corner score is the largest sum of |ring - center|
    over a qualifying contiguous arc; non-maximum suppression keeps local
    score maxima over the 8-neighborhood."""
    if img.width < 7 or img.height < 7:
        raise TooSmallError(f"image {img.width}x{img.height} smaller than 7x7")
    px = img.pixels.astype(np.int32)
    h, w = px.shape
    ih, iw = h - 6, w - 6  # interior grid where the full ring fits
    center = px[3:3 + ih, 3:3 + iw]
    ring = np.stack([px[3 + dr:3 + dr + ih, 3 + dc:3 + dc + iw] for dr, dc in _RING])
    brighter = ring > center + threshold
    darker = ring < center - threshold
    absdiff = np.abs(ring - center)

    score = np.zeros((ih, iw), dtype=np.int64)
    ext_b = np.concatenate([brighter, brighter[:_ARC - 1]], axis=0)
    ext_d = np.concatenate([darker, darker[:_ARC - 1]], axis=0)
    ext_a = np.concatenate([absdiff, absdiff[:_ARC - 1]], axis=0)
    for s in range(16):
        win_b = np.all(ext_b[s:s + _ARC], axis=0)
        win_d = np.all(ext_d[s:s + _ARC], axis=0)
        win = win_b | win_d
        if not np.any(win):
            continue
        arc_sum = np.sum(ext_a[s:s + _ARC], axis=0)
        score = np.where(win, np.maximum(score, arc_sum), score)

    if not nonmax:
        return int(np.count_nonzero(score > 0))
    # ties resolve toward the earlier (top-left) pixel: strict > against
    # earlier neighbors' scores, >= against later ones
    padded = np.zeros((ih + 2, iw + 2), dtype=np.int64)
    padded[1:-1, 1:-1] = score
    keep = score > 0
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            neighbor = padded[1 + dr:1 + dr + ih, 1 + dc:1 + dc + iw]
            if (dr, dc) < (0, 0):
                keep &= score > neighbor
            else:
                keep &= score >= neighbor
    return int(np.count_nonzero(keep))


# ---------------------------------------------------------------------------
# IMU features
# ---------------------------------------------------------------------------

def _parse_axis_map(axis_map: dict):
    axes = {"x": 0, "y": 1, "z": 2}
    idx = []
    sign = []
    seen = set()
    for key in ("right", "up", "front"):
        if key not in axis_map:
            raise BadAxisMapError(f"axis map missing {key!r}")
        token = str(axis_map[key]).strip().lower()
        s = 1.0
        if token and token[0] in "+-":
            s = -1.0 if token[0] == "-" else 1.0
            token = token[1:]
        if token not in axes:
            raise BadAxisMapError(f"bad axis token {axis_map[key]!r} for {key!r}")
        if token in seen:
            raise BadAxisMapError(f"axis {token!r} used more than once")
        seen.add(token)
        idx.append(axes[token])
        sign.append(s)
    return np.array(idx), np.array(sign)


def imu_features(samples, axis_map: dict = DEFAULT_AXIS_MAP,
                 remove_gravity: bool = False,
                 gravity: float = GRAVITY) -> list[ImuFeatures]:
    """Map sensor axes onto (right, up, front) and take per-sample component
    magnitudes. Angular velocity about right/up/front becomes
    pitch/yaw/roll. With `remove_gravity`, the constant gravity magnitude is
    subtracted from the mapped up-acceleration before the absolute value
    (off by default: raw magnitudes)."""
    idx, sign = _parse_axis_map(axis_map)
    out = []
    for s in samples:
        acc = sign * np.asarray(s.acc, dtype=float)[idx]
        gyro = sign * np.asarray(s.angvel, dtype=float)[idx]
        if remove_gravity:
            acc[1] -= gravity
        acc = np.abs(acc)
        gyro = np.abs(gyro)
        out.append(ImuFeatures(s.timestamp, acc[0], acc[1], acc[2],
                               gyro[0], gyro[1], gyro[2]))
    return out


# ---------------------------------------------------------------------------
# window aggregation and correlation
# ---------------------------------------------------------------------------

def aggregate_to_windows(table: FeatureTable, series: ErrorSeries) -> FeatureTable:
    """Average each feature over the window [a, b] of every error point.

    RPE series carry their window starts; for sample-level series the window
    is the interval since the previous point (the first point is dropped).
    Windows containing no feature sample are dropped. The result gains an
    'error' column aligned with the surviving window ends.
    """
    if series.window_starts is not None:
        starts = series.window_starts
        ends = series.timestamps
        errors = series.errors
    else:
        starts = series.timestamps[:-1]
        ends = series.timestamps[1:]
        errors = series.errors[1:]
    ft = table.timestamps
    lo = np.searchsorted(ft, starts, side="left")
    hi = np.searchsorted(ft, ends, side="right")
    keep = hi > lo
    if not np.any(keep):
        raise NoOverlapError("no feature samples fall inside any error window")
    csums = {name: np.concatenate([[0.0], np.cumsum(col)]) for name, col in table.columns.items()}
    n_in = (hi - lo)[keep].astype(float)
    out_cols = {
        name: (cs[hi[keep]] - cs[lo[keep]]) / n_in for name, cs in csums.items()
    }
    out_cols["error"] = errors[keep]
    return FeatureTable(ends[keep], out_cols)


def pearson(x, y) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.size != y.size:
        raise ValueError("series lengths differ")
    if x.size < 3:
        raise InsufficientDataError(f"need at least 3 points, found {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(np.sum(dx * dx))
    sy = float(np.sum(dy * dy))
    if sx == 0.0 or sy == 0.0:
        raise ConstantInputError("constant input series")
    return float(np.sum(dx * dy) / math.sqrt(sx * sy))


def correlation_report(table: FeatureTable, series: ErrorSeries) -> CorrelationReport:
    """Pearson r of every feature column against the windowed error series.

    Constant feature columns are reported with r = None instead of failing
    the whole report.
    """
    agg = aggregate_to_windows(table, series)
    err = agg.columns["error"]
    entries = []
    for name in table.columns:
        col = agg.columns[name]
        try:
            entries.append(CorrelationEntry(name, pearson(col, err), int(col.size)))
        except ConstantInputError:
            entries.append(CorrelationEntry(name, None, int(col.size), "constant input"))
    return CorrelationReport(entries)


# ---------------------------------------------------------------------------
# frame-feature extraction and persistence
# ---------------------------------------------------------------------------

def frame_features_from_files(records, base_dir=None, keypoint_counts=None,
                              threshold: int = 20, nonmax: bool = True) -> list[FrameFeatures]:
    """Compute FrameFeatures for every frame-index record. When per-frame
    keypoint counts are supplied (e.g. exported by a tracking pipeline), they
    are ingested as-is; otherwise the segment-test corner count is used as a
    documented proxy."""
    records = list(records)
    if keypoint_counts is not None and len(keypoint_counts) != len(records):
        raise ValueError("keypoint_counts length must match the frame index")
    base = os.fspath(base_dir) if base_dir is not None else "."
    out = []
    for i, rec in enumerate(records):
        path = rec.filename if os.path.isabs(rec.filename) else os.path.join(base, rec.filename)
        img = read_gray_image(path)
        brightness, contrast, entropy, lap_var = image_metrics(img)
        if keypoint_counts is not None:
            kp = int(keypoint_counts[i])
        else:
            kp = fast_corners(img, threshold=threshold, nonmax=nonmax)
        out.append(FrameFeatures(rec.timestamp, brightness, contrast, entropy, lap_var, kp))
    return out


def write_frame_features(features, path, header: bool = True) -> None:
    lines = []
    if header:
        lines.append("timestamp," + ",".join(FRAME_FEATURE_COLUMNS))
    for f in features:
        lines.append(
            f"{float(f.timestamp)!r},{float(f.brightness)!r},{float(f.contrast)!r},"
            f"{float(f.entropy)!r},{float(f.laplacian_var)!r},{int(f.keypoints)}"
        )
    path = os.fspath(path)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_frame_features(path) -> list[FrameFeatures]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or (lineno == 1 and line.startswith("timestamp")):
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise ValueError(f"line {lineno}: expected 6 columns")
            out.append(FrameFeatures(
                float(parts[0]), float(parts[1]), float(parts[2]),
                float(parts[3]), float(parts[4]), int(parts[5]),
            ))
    return out


def save_correlation_report(report: CorrelationReport, path) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)
        f.write("\n")
    os.replace(tmp, path)
