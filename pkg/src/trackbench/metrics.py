"""Trajectory error metrics: association, absolute pose error (APE), relative
pose error (RPE) over fixed-arc-length segments, reference substitution, and
error-series agreement (R^2).

APE aligns the whole estimate to ground truth once and reports point-wise
translation distances, so accumulated drift shows up directly. RPE partitions
the timeline into consecutive windows of fixed ground-truth arc length
(default 0.10 m) and reports, per window, the difference between the relative
motions of estimate and ground truth, which isolates local drift; this equals
aligning each window's start pose onto ground truth and measuring the endpoint
distance. Both metrics are translation-only; rotation errors ride along as an
auxiliary series.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    InsufficientDataError,
    NoOverlapError,
    TooShortError,
)
from .geometry import (
    Pose,
    Trajectory,
    UnitQuaternion,
    align_point_sets,
    quat_angle,
    quat_conjugate,
    quat_multiply,
    quat_rotate,
    transform_trajectory,
)

__all__ = [
    "AssociatedPair",
    "ErrorSeries",
    "associate",
    "ape",
    "rpe",
    "substitute_reference",
    "compare_error_series",
    "write_error_series",
    "read_error_series",
    "DEFAULT_SEGMENT_LENGTH",
]

DEFAULT_SEGMENT_LENGTH = 0.10  # meters


@dataclass(frozen=True, eq=False)
class AssociatedPair:
    """Ground-truth and estimated pose sharing one timestamp."""

    timestamp: float
    gt_pose: Pose
    est_pose: Pose


class ErrorSeries:
    """Per-timestamp scalar pose errors plus summary statistics.

    `window_starts` is set for RPE series (each error covers [start, end]);
    `rotation_errors` is the auxiliary geodesic-angle series in radians.
    Statistics are recomputed from the points on construction.
    """

    def __init__(self, kind: str, timestamps, errors, *,
                 segment_length: float | None = None,
                 window_starts=None, rotation_errors=None):
        self.kind = str(kind)
        self.timestamps = np.asarray(timestamps, dtype=float).reshape(-1)
        self.errors = np.asarray(errors, dtype=float).reshape(-1)
        if self.timestamps.size == 0:
            raise InsufficientDataError("empty error series")
        if self.timestamps.size != self.errors.size:
            raise ValueError("timestamps/errors length mismatch")
        if np.any(self.errors < 0.0):
            raise ValueError("errors must be non-negative")
        if np.any(np.diff(self.timestamps) < 0.0):
            raise ValueError("timestamps must be non-decreasing")
        self.segment_length = None if segment_length is None else float(segment_length)
        self.window_starts = (
            None if window_starts is None
            else np.asarray(window_starts, dtype=float).reshape(-1)
        )
        self.rotation_errors = (
            None if rotation_errors is None
            else np.asarray(rotation_errors, dtype=float).reshape(-1)
        )
        self.mean = float(np.mean(self.errors))
        self.rmse = float(np.sqrt(np.mean(self.errors ** 2)))
        self.median = float(np.median(self.errors))
        self.max = float(np.max(self.errors))

    @property
    def n(self) -> int:
        return int(self.errors.size)

    def stats(self) -> dict:
        out = {
            "kind": self.kind,
            "n": self.n,
            "mean": self.mean,
            "rmse": self.rmse,
            "median": self.median,
            "max": self.max,
        }
        if self.segment_length is not None:
            out["segment_length"] = self.segment_length
        return out

    def __repr__(self):
        return (f"ErrorSeries({self.kind}, n={self.n}, mean={self.mean:.4g} m, "
                f"rmse={self.rmse:.4g} m)")


def _associated_arrays(est: Trajectory, gt: Trajectory):
    lo = max(gt.start_time, est.start_time)
    hi = min(gt.end_time, est.end_time)
    if lo > hi:
        raise NoOverlapError("trajectory time spans do not overlap")
    mask = (est.times >= lo) & (est.times <= hi)
    ts = est.times[mask]
    if ts.size == 0:
        raise NoOverlapError("no estimate samples inside the ground-truth span")
    gq, gt_t = gt.interp_arrays(ts)
    return ts, gq, gt_t, est.quaternions[mask], est.translations[mask]


def associate(est: Trajectory, gt: Trajectory) -> list[AssociatedPair]:
    """One pair per estimate sample inside the ground-truth span; ground truth
    is interpolated at the estimate timestamps."""
    ts, gq, gt_t, eq, et = _associated_arrays(est, gt)
    return [
        AssociatedPair(
            float(t),
            Pose(UnitQuaternion.from_array(g_q), g_t),
            Pose(UnitQuaternion.from_array(e_q), e_t),
        )
        for t, g_q, g_t, e_q, e_t in zip(ts, gq, gt_t, eq, et)
    ]


def ape(est: Trajectory, gt: Trajectory) -> ErrorSeries:
    """Absolute pose error: one rigid alignment of the estimate onto ground
    truth, then point-wise translation distance per associated timestamp."""
    ts, gq, gt_t, eq, et = _associated_arrays(est, gt)
    if ts.size < 3:
        raise InsufficientDataError(f"APE needs at least 3 pairs, found {ts.size}")
    a = align_point_sets(gt_t, et)
    aligned = a.apply(et)
    errors = np.linalg.norm(aligned - gt_t, axis=1)
    rot_err = quat_angle(quat_multiply(a.rotation.as_array()[None, :], eq), gq)
    return ErrorSeries("ape", ts, errors, rotation_errors=rot_err)


def rpe(est: Trajectory, gt: Trajectory,
        segment_length: float = DEFAULT_SEGMENT_LENGTH) -> ErrorSeries:
    """Relative pose error over consecutive windows of fixed ground-truth arc
    length. Window boundaries are found by a greedy scan of cumulative arc
    length (interpolated inside sample intervals, so every full window has
    exactly the requested arc length); the final partial window is dropped.
    Per window [a, b] the error is
    ||trans(gt_a⁻¹ ∘ gt_b) − trans(est_a⁻¹ ∘ est_b)||, stamped at b."""
    if segment_length <= 0.0:
        raise ValueError("segment_length must be positive")
    ts, gq, gt_t, eq, et = _associated_arrays(est, gt)
    if ts.size < 2:
        raise TooShortError("need at least 2 associated samples")
    steps = np.linalg.norm(np.diff(gt_t, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    total = float(cum[-1])
    # small relative slack so an exactly divisible arc yields all its windows
    n_seg = int(math.floor(total / segment_length + 1e-9))
    if n_seg < 1:
        raise TooShortError(
            f"ground-truth arc length {total:.4f} m shorter than one "
            f"{segment_length:.4f} m segment"
        )
    marks = np.arange(n_seg + 1) * segment_length
    marks[-1] = min(marks[-1], total)
    bound_ts = np.interp(marks, cum, ts)

    gbq, gbt = gt.interp_arrays(bound_ts)
    ebq, ebt = est.interp_arrays(bound_ts)
    rel_g = quat_rotate(quat_conjugate(gbq[:-1]), gbt[1:] - gbt[:-1])
    rel_e = quat_rotate(quat_conjugate(ebq[:-1]), ebt[1:] - ebt[:-1])
    errors = np.linalg.norm(rel_g - rel_e, axis=1)
    rot_rel_g = quat_multiply(quat_conjugate(gbq[:-1]), gbq[1:])
    rot_rel_e = quat_multiply(quat_conjugate(ebq[:-1]), ebq[1:])
    rot_err = quat_angle(rot_rel_g, rot_rel_e)
    return ErrorSeries(
        "rpe", bound_ts[1:], errors,
        segment_length=segment_length,
        window_starts=bound_ts[:-1],
        rotation_errors=rot_err,
    )


def substitute_reference(ref_est: Trajectory, mount: Pose, target_est: Trajectory,
                         segment_length: float = DEFAULT_SEGMENT_LENGTH):
    """Use one device's trajectory as pseudo-ground-truth for another.

    The pseudo ground truth is the reference estimate with every pose
    right-composed with the fixed mount transform (reference frame -> target
    frame). Returns (pseudo_gt, ape_vs_pseudo, rpe_vs_pseudo).
    """
    pseudo = transform_trajectory(
        ref_est, post=mount, frames=(ref_est.frames[0], "H")
    )
    return pseudo, ape(target_est, pseudo), rpe(target_est, pseudo, segment_length)


def _pair_series(a: ErrorSeries, b: ErrorSeries):
    """Match points of a and b by nearest timestamp within half an interval."""
    ta, tb = a.timestamps, b.timestamps
    med = []
    for t in (ta, tb):
        if t.size > 1:
            med.append(float(np.median(np.diff(t))))
    tol = 0.5 * max(med) if med else math.inf
    idx = np.searchsorted(tb, ta)
    left = np.clip(idx - 1, 0, tb.size - 1)
    right = np.clip(idx, 0, tb.size - 1)
    nearest = np.where(np.abs(tb[left] - ta) <= np.abs(tb[right] - ta), left, right)
    ok = np.abs(tb[nearest] - ta) <= tol
    return a.errors[ok], b.errors[nearest[ok]]


def compare_error_series(a: ErrorSeries, b: ErrorSeries,
                         identity_line: bool = False) -> float:
    """R^2 of the ordinary least-squares linear fit of b's errors against a's,
    over points matched by nearest timestamp. For a simple linear fit this is
    the squared Pearson correlation; it measures agreement of the two series'
    shapes, not their calibration. Pass `identity_line=True` to score against
    the b = a line instead (penalizing scale and offset), which can then be
    negative."""
    va, vb = _pair_series(a, b)
    if va.size < 3:
        raise InsufficientDataError(f"only {va.size} matched points; need 3")
    db = vb - vb.mean()
    ss_tot = float(np.sum(db * db))
    if ss_tot == 0.0:
        raise InsufficientDataError("an error series is constant; R^2 undefined")
    if identity_line:
        return 1.0 - float(np.sum((vb - va) ** 2)) / ss_tot
    da = va - va.mean()
    ss_a = float(np.sum(da * da))
    if ss_a == 0.0:
        raise InsufficientDataError("an error series is constant; R^2 undefined")
    r = float(np.sum(da * db)) / math.sqrt(ss_a * ss_tot)
    return r * r


# ---------------------------------------------------------------------------
# persistence: CSV of timestamp,error_m plus a JSON stats block
# ---------------------------------------------------------------------------

def write_error_series(series: ErrorSeries, csv_path, stats_path=None) -> None:
    lines = ["timestamp,error_m"]
    for t, e in zip(series.timestamps, series.errors):
        lines.append(f"{float(t)!r},{float(e)!r}")
    csv_path = os.fspath(csv_path)
    tmp = f"{csv_path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, csv_path)
    if stats_path is not None:
        stats_path = os.fspath(stats_path)
        tmp = f"{stats_path}.tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(series.stats(), f, indent=2)
            f.write("\n")
        os.replace(tmp, stats_path)


def read_error_series(csv_path, kind: str = "ape",
                      segment_length: float | None = None) -> ErrorSeries:
    ts = []
    errs = []
    with open(csv_path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or (lineno == 1 and line.startswith("timestamp")):
                continue
            t_str, e_str = line.split(",", 1)
            ts.append(float(t_str))
            errs.append(float(e_str))
    return ErrorSeries(kind, ts, errs, segment_length=segment_length)
