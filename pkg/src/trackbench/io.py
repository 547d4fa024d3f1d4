"""Readers and writers for the capture formats: pose CSV, IMU CSV, frame-index
CSV, and binary PGM grayscale images (PNG optional via Pillow).

All CSV is comma-separated UTF-8 with '.' decimal point. Floats are written
with repr() so a write/read/write cycle is byte-identical. Readers reject
malformed rows instead of repairing them; errors carry 1-based line numbers.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadQuaternionError,
    CorruptHeaderError,
    NonMonotonicTimestampsError,
    ParseError,
    UnsupportedFormatError,
)
from .geometry import Trajectory

__all__ = [
    "ImuSample",
    "FrameRecord",
    "GrayImage",
    "ImuRateWarning",
    "POSE_COLUMNS",
    "IMU_COLUMNS",
    "read_trajectory",
    "write_trajectory",
    "read_imu",
    "write_imu",
    "read_frame_index",
    "write_frame_index",
    "read_gray_image",
    "write_gray_image",
    "png_supported",
]

POSE_COLUMNS = ("timestamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw")
IMU_COLUMNS = ("timestamp", "ax", "ay", "az", "gx", "gy", "gz")
FRAME_COLUMNS = ("timestamp", "filename")

QUAT_NORM_TOL = 1e-3


class ImuRateWarning(UserWarning):
    """Median IMU sample interval deviates from the nominal rate."""


@dataclass(frozen=True, eq=False)
class ImuSample:
    """One inertial reading: linear acceleration (m/s^2) and angular velocity (rad/s)."""

    timestamp: float
    acc: np.ndarray
    angvel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "acc", np.asarray(self.acc, dtype=float).reshape(3))
        object.__setattr__(self, "angvel", np.asarray(self.angvel, dtype=float).reshape(3))


@dataclass(frozen=True)
class FrameRecord:
    """Timestamped reference to a captured image file."""

    timestamp: float
    filename: str


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit grayscale image, row-major pixels of shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise ValueError("pixels must be a non-empty 2-D array")
        object.__setattr__(self, "pixels", px.astype(np.uint8, copy=False))

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


# ---------------------------------------------------------------------------
# CSV plumbing
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def _atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    os.replace(tmp, path)


def _is_float(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def _parse_numeric_rows(path, n_cols: int, column_map: dict[str, str] | None = None,
                        columns: tuple[str, ...] = ()):
    """Yield (line_number, values) for each data row of a numeric CSV.

    The first line may be a header (detected by a non-numeric first token).
    When column_map is given ({canonical: actual header}), a header line is
    required and columns are reordered accordingly.
    """
    order = None
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if rows == [] and order is None and not _is_float(parts[0]):
                if column_map is not None:
                    try:
                        order = [parts.index(column_map.get(c, c)) for c in columns]
                    except ValueError as e:
                        raise ParseError(lineno, f"header is missing a mapped column: {e}")
                else:
                    order = list(range(n_cols))
                continue
            if order is None:
                if column_map is not None:
                    raise ParseError(lineno, "column map given but file has no header line")
                order = list(range(n_cols))
            if len(parts) < n_cols or (column_map is None and len(parts) != n_cols):
                raise ParseError(lineno, f"expected {n_cols} columns, found {len(parts)}")
            try:
                values = [float(parts[i]) for i in order]
            except (ValueError, IndexError):
                raise ParseError(lineno, f"non-numeric value in row: {line!r}")
            if not all(math.isfinite(v) for v in values):
                raise ParseError(lineno, "non-finite value in row")
            rows.append((lineno, values))
    return rows


# ---------------------------------------------------------------------------
# pose CSV
# ---------------------------------------------------------------------------

def read_trajectory(path, frames=("world", "body"),
                    column_map: dict[str, str] | None = None) -> Trajectory:
    """Load a pose CSV (timestamp,tx,ty,tz,qx,qy,qz,qw) into a Trajectory.

    Quaternions must be unit within 1e-3 and are renormalized on load.
    Duplicate or decreasing timestamps are rejected. `column_map` maps the
    canonical column names to the headers of a foreign file.
    """
    rows = _parse_numeric_rows(path, 8, column_map, POSE_COLUMNS)
    if not rows:
        raise ParseError(0, "no pose rows in file")
    prev_t = -math.inf
    for lineno, vals in rows:
        t = vals[0]
        if t <= prev_t:
            raise NonMonotonicTimestampsError(
                lineno, f"timestamp {t!r} does not increase (previous {prev_t!r})"
            )
        prev_t = t
        norm = math.sqrt(vals[4] ** 2 + vals[5] ** 2 + vals[6] ** 2 + vals[7] ** 2)
        if abs(norm - 1.0) > QUAT_NORM_TOL:
            raise BadQuaternionError(lineno, norm)
    data = np.array([vals for _, vals in rows], dtype=float)
    return Trajectory(data[:, 0], data[:, 1:4], data[:, 4:8], frames)


def write_trajectory(traj: Trajectory, path, header: bool = True) -> None:
    lines = []
    if header:
        lines.append(",".join(POSE_COLUMNS))
    for t, p, q in zip(traj.times, traj.translations, traj.quaternions):
        lines.append(",".join(_fmt(v) for v in (t, p[0], p[1], p[2], q[0], q[1], q[2], q[3])))
    _atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# IMU CSV
# ---------------------------------------------------------------------------

def read_imu(path, expected_rate: float | None = 200.0) -> list[ImuSample]:
    """Load an IMU CSV (timestamp,ax,ay,az,gx,gy,gz).

    Timestamps must be non-decreasing. An empty data section is legal and
    returns []. When `expected_rate` is set, warns if the median interval
    deviates from it by more than 20%.
    """
    rows = _parse_numeric_rows(path, 7)
    prev_t = -math.inf
    samples = []
    for lineno, vals in rows:
        if vals[0] < prev_t:
            raise NonMonotonicTimestampsError(
                lineno, f"timestamp {vals[0]!r} decreases (previous {prev_t!r})"
            )
        prev_t = vals[0]
        samples.append(ImuSample(vals[0], vals[1:4], vals[4:7]))
    if expected_rate and len(samples) >= 2:
        dt = float(np.median(np.diff([s.timestamp for s in samples])))
        nominal = 1.0 / expected_rate
        if dt <= 0 or abs(dt - nominal) / nominal > 0.20:
            warnings.warn(
                f"median IMU interval {dt:.6g} s deviates more than 20% from "
                f"nominal {nominal:.6g} s ({expected_rate:g} Hz)",
                ImuRateWarning,
                stacklevel=2,
            )
    return samples


def write_imu(samples, path, header: bool = True) -> None:
    lines = []
    if header:
        lines.append(",".join(IMU_COLUMNS))
    for s in samples:
        vals = (s.timestamp, *s.acc, *s.angvel)
        lines.append(",".join(_fmt(v) for v in vals))
    _atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# frame-index CSV
# ---------------------------------------------------------------------------

def read_frame_index(path, require_files: bool = False, base_dir=None) -> list[FrameRecord]:
    """Load a frame index (timestamp,filename). When `require_files` is set,
    every referenced image must exist (relative paths resolve against
    `base_dir`, defaulting to the index file's directory)."""
    records = []
    base = os.fspath(base_dir) if base_dir is not None else os.path.dirname(os.fspath(path))
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            if "," not in line:
                raise ParseError(lineno, "expected 'timestamp,filename'")
            ts_str, filename = line.split(",", 1)
            ts_str = ts_str.strip()
            filename = filename.strip()
            if lineno == 1 and not _is_float(ts_str):
                continue
            if not _is_float(ts_str) or not math.isfinite(float(ts_str)):
                raise ParseError(lineno, f"bad timestamp {ts_str!r}")
            if not filename:
                raise ParseError(lineno, "empty filename")
            records.append(FrameRecord(float(ts_str), filename))
    if require_files:
        for rec in records:
            full = rec.filename if os.path.isabs(rec.filename) else os.path.join(base, rec.filename)
            if not os.path.exists(full):
                raise FileNotFoundError(f"frame image not found: {full}")
    return records


def write_frame_index(records, path, header: bool = True) -> None:
    lines = []
    if header:
        lines.append(",".join(FRAME_COLUMNS))
    for rec in records:
        lines.append(f"{_fmt(rec.timestamp)},{rec.filename}")
    _atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# grayscale images
# ---------------------------------------------------------------------------

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def png_supported() -> bool:
    try:
        from PIL import Image  # noqa: F401
        return True
    except ImportError:
        return False


def read_gray_image(path) -> GrayImage:
    """Load a binary PGM (P5, maxval 255); PNG behind the same contract when
    Pillow is installed. Pixels are returned exactly as stored."""
    with open(path, "rb") as f:
        head = f.read(8)
    if head.startswith(b"P5"):
        return _read_pgm(path)
    if head == _PNG_MAGIC:
        return _read_png(path)
    if head[:2] in (b"P1", b"P2", b"P3", b"P4", b"P6"):
        raise UnsupportedFormatError(f"unsupported PNM variant {head[:2]!r}; only binary P5 is handled")
    raise UnsupportedFormatError(f"unrecognized image magic {head[:2]!r}")


def _read_pgm(path) -> GrayImage:
    with open(path, "rb") as f:
        data = f.read()
    pos = 0

    def next_token():
        nonlocal pos
        while pos < len(data):
            c = data[pos:pos + 1]
            if c == b"#":
                eol = data.find(b"\n", pos)
                pos = len(data) if eol < 0 else eol + 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise CorruptHeaderError("truncated PGM header")
        return data[start:pos]

    magic = next_token()
    if magic != b"P5":
        raise UnsupportedFormatError(f"not a binary PGM: magic {magic!r}")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError:
        raise CorruptHeaderError("non-integer PGM header field")
    if width <= 0 or height <= 0:
        raise CorruptHeaderError(f"bad PGM dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormatError(f"PGM maxval {maxval} unsupported; only 255 (8-bit)")
    pos += 1  # exactly one whitespace byte separates the header from the raster
    raster = data[pos:pos + width * height]
    if len(raster) < width * height:
        raise CorruptHeaderError(
            f"truncated PGM raster: expected {width * height} bytes, found {len(raster)}"
        )
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()
    return GrayImage(pixels)


def _read_png(path) -> GrayImage:
    try:
        from PIL import Image
    except ImportError:
        raise UnsupportedFormatError(
            "PNG input requires the optional Pillow dependency (pip install trackbench[png])"
        )
    with Image.open(path) as img:
        gray = img.convert("L")
        return GrayImage(np.asarray(gray, dtype=np.uint8))


def write_gray_image(img: GrayImage, path) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(f"P5\n{img.width} {img.height}\n255\n".encode("ascii"))
        f.write(img.pixels.tobytes())
    os.replace(tmp, path)
