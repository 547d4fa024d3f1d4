"""Rigid-body math: unit quaternions, SE(3) poses, timed trajectories, alignment.

Conventions used throughout the toolkit:
  * quaternions are stored (x, y, z, w), Hamilton product, canonical sign w >= 0;
  * translations are metric 3-vectors, timestamps are seconds;
  * rotation distance is the geodesic angle between unit quaternions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateError, OutOfRangeError

__all__ = [
    "UnitQuaternion",
    "Pose",
    "PoseSample",
    "Trajectory",
    "compose",
    "inverse",
    "slerp",
    "interpolate_at",
    "arc_length",
    "umeyama_align",
    "align_point_sets",
    "transform_trajectory",
    "quat_multiply",
    "quat_conjugate",
    "quat_rotate",
    "quat_angle",
    "quat_normalize",
    "quat_canonical",
    "quat_mean",
    "quat_from_rotvec",
    "quat_to_rotvec",
    "quat_from_matrix",
]


# ---------------------------------------------------------------------------
# array-level quaternion helpers, shape (..., 4) in (x, y, z, w) order
# ---------------------------------------------------------------------------

def quat_normalize(q):
    """Scale to unit norm; already-unit inputs pass through bit-identically."""
    q = np.asarray(q, dtype=float)
    n2 = np.sum(q * q, axis=-1, keepdims=True)
    if np.any(n2 <= 0.0) or not np.all(np.isfinite(n2)):
        raise ValueError("quaternion with zero or non-finite norm")
    # skipping the divide when the norm is already 1 keeps normalization idempotent
    return np.where(np.abs(n2 - 1.0) < 1e-12, q, q / np.sqrt(n2))


def quat_canonical(q):
    """Flip sign so w >= 0; q and -q denote the same rotation."""
    q = np.asarray(q, dtype=float)
    flip = q[..., 3:4] < 0.0
    return np.where(flip, -q, q)


def quat_multiply(a, b):
    """Hamilton product a * b, broadcasting over leading dimensions."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ax, ay, az, aw = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bx, by, bz, bw = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ],
        axis=-1,
    )


def quat_conjugate(q):
    q = np.asarray(q, dtype=float)
    out = q.copy()
    out[..., :3] *= -1.0
    return out


def quat_rotate(q, v):
    """Rotate 3-vectors v by unit quaternions q (broadcasting)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    u = q[..., :3]
    w = q[..., 3:4]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_angle(a, b):
    """Geodesic angle between two rotations, radians in [0, pi].

    Evaluated through the relative quaternion with atan2 so that angles far
    below 1e-8 rad are still resolved.
    """
    rel = quat_multiply(quat_conjugate(np.asarray(a, dtype=float)), b)
    s = np.linalg.norm(rel[..., :3], axis=-1)
    return 2.0 * np.arctan2(s, np.abs(rel[..., 3]))


def quat_from_rotvec(r):
    """Unit quaternion for a rotation vector (axis * angle)."""
    r = np.asarray(r, dtype=float)
    angle = np.linalg.norm(r, axis=-1, keepdims=True)
    half = 0.5 * angle
    small = angle < 1e-12
    k = np.where(small, 0.5, np.sin(half) / np.where(small, 1.0, angle))
    xyz = r * k
    w = np.cos(half)
    return np.concatenate([xyz, w], axis=-1)


def quat_to_rotvec(q):
    """Rotation vector (axis * angle) of a unit quaternion, angle in [0, pi]."""
    q = quat_canonical(q)
    xyz = q[..., :3]
    s = np.linalg.norm(xyz, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., 3:4])
    small = s < 1e-12
    k = np.where(small, 2.0, angle / np.where(small, 1.0, s))
    return xyz * k


def quat_from_matrix(m):
    """Quaternion from a 3x3 rotation matrix (Shepperd's method)."""
    m = np.asarray(m, dtype=float)
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    return quat_canonical(quat_normalize(np.array([x, y, z, w])))


def quat_mean(qs, weights=None):
    """Chordal mean of unit quaternions (largest eigenvector of sum q q^T).

    Sign-agnostic: q and -q contribute identically.
    """
    qs = np.asarray(qs, dtype=float)
    if weights is None:
        m = qs.T @ qs
    else:
        w = np.asarray(weights, dtype=float)
        m = (qs * w[:, None]).T @ qs
    _, vecs = np.linalg.eigh(m)
    return quat_canonical(quat_normalize(vecs[:, -1]))


def _slerp_arrays(q0, q1, u):
    """Shortest-arc slerp with per-row interpolation parameter u."""
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    u = np.asarray(u, dtype=float)[..., None]
    dot = np.sum(q0 * q1, axis=-1, keepdims=True)
    q1 = np.where(dot < 0.0, -q1, q1)
    dot = np.clip(np.abs(dot), 0.0, 1.0)
    near = dot > 1.0 - 1e-10
    theta = np.arccos(np.where(near, 0.0, dot))
    sin_theta = np.sin(theta)
    safe_sin = np.where(near, 1.0, sin_theta)
    w0 = np.where(near, 1.0 - u, np.sin((1.0 - u) * theta) / safe_sin)
    w1 = np.where(near, u, np.sin(u * theta) / safe_sin)
    return quat_normalize(w0 * q0 + w1 * q1)


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion (x, y, z, w); normalized and sign-canonicalized (w >= 0)."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    w: float = 1.0

    def __post_init__(self):
        q = quat_canonical(quat_normalize([self.x, self.y, self.z, self.w]))
        object.__setattr__(self, "x", float(q[0]))
        object.__setattr__(self, "y", float(q[1]))
        object.__setattr__(self, "z", float(q[2]))
        object.__setattr__(self, "w", float(q[3]))

    @classmethod
    def identity(cls) -> "UnitQuaternion":
        return cls(0.0, 0.0, 0.0, 1.0)

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "UnitQuaternion":
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise ValueError("zero rotation axis")
        half = 0.5 * float(angle)
        xyz = axis / n * math.sin(half)
        return cls(xyz[0], xyz[1], xyz[2], math.cos(half))

    @classmethod
    def from_array(cls, q) -> "UnitQuaternion":
        q = np.asarray(q, dtype=float).reshape(4)
        return cls(q[0], q[1], q[2], q[3])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.w])

    def multiply(self, other: "UnitQuaternion") -> "UnitQuaternion":
        return UnitQuaternion.from_array(quat_multiply(self.as_array(), other.as_array()))

    def inverse(self) -> "UnitQuaternion":
        return UnitQuaternion(-self.x, -self.y, -self.z, self.w)

    def rotate(self, v) -> np.ndarray:
        return quat_rotate(self.as_array(), np.asarray(v, dtype=float))

    def angle_to(self, other: "UnitQuaternion") -> float:
        return float(quat_angle(self.as_array(), other.as_array()))

    def angle(self) -> float:
        """Rotation angle relative to identity, radians."""
        return self.angle_to(UnitQuaternion.identity())

    def as_matrix(self) -> np.ndarray:
        return quat_rotate(self.as_array(), np.eye(3)).T


def _as_translation(t) -> np.ndarray:
    t = np.array(t, dtype=float).reshape(3)
    if not np.all(np.isfinite(t)):
        raise ValueError("non-finite translation")
    t.setflags(write=False)
    return t


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: rotate by `rotation`, then offset by `translation` (meters)."""

    rotation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "translation", _as_translation(self.translation))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    def apply(self, points) -> np.ndarray:
        """Map points (…, 3) through this transform."""
        return quat_rotate(self.rotation.as_array(), points) + self.translation

    def inverse(self) -> "Pose":
        return inverse(self)

    def compose(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.as_matrix()
        m[:3, 3] = self.translation
        return m

    def __repr__(self):
        q = self.rotation
        t = self.translation
        return (f"Pose(q=[{q.x:.6g}, {q.y:.6g}, {q.z:.6g}, {q.w:.6g}], "
                f"t=[{t[0]:.6g}, {t[1]:.6g}, {t[2]:.6g}])")


@dataclass(frozen=True, eq=False)
class PoseSample:
    """A pose observed at one instant."""

    timestamp: float
    pose: Pose

    def __post_init__(self):
        ts = float(self.timestamp)
        if not math.isfinite(ts):
            raise ValueError("non-finite timestamp")
        object.__setattr__(self, "timestamp", ts)


class Trajectory:
    """Time-ordered pose samples with strictly increasing timestamps.

    Stored column-wise (times, translations, quaternions) so that metric and
    calibration code can stay vectorized. Quaternions are normalized and
    sign-canonicalized on construction. Frames labels the (world, body) pair.
    """

    __slots__ = ("times", "translations", "quaternions", "frames")

    def __init__(self, times, translations, quaternions, frames=("world", "body")):
        times = np.asarray(times, dtype=float).reshape(-1)
        translations = np.asarray(translations, dtype=float).reshape(-1, 3)
        quaternions = np.asarray(quaternions, dtype=float).reshape(-1, 4)
        if times.size == 0:
            raise ValueError("empty trajectory")
        if not (times.size == translations.shape[0] == quaternions.shape[0]):
            raise ValueError("times/translations/quaternions length mismatch")
        if not np.all(np.isfinite(times)) or not np.all(np.isfinite(translations)):
            raise ValueError("non-finite trajectory data")
        if times.size > 1 and not np.all(np.diff(times) > 0.0):
            raise ValueError("timestamps must be strictly increasing")
        self.times = times
        self.translations = translations
        self.quaternions = quat_canonical(quat_normalize(quaternions))
        for a in (self.times, self.translations, self.quaternions):
            a.setflags(write=False)
        self.frames = (str(frames[0]), str(frames[1]))

    @classmethod
    def from_samples(cls, samples, frames=("world", "body")) -> "Trajectory":
        samples = list(samples)
        times = [s.timestamp for s in samples]
        trans = [s.pose.translation for s in samples]
        quats = [s.pose.rotation.as_array() for s in samples]
        return cls(times, trans, quats, frames)

    def __len__(self) -> int:
        return int(self.times.size)

    def __iter__(self):
        for i in range(len(self)):
            yield self.sample(i)

    def sample(self, i: int) -> PoseSample:
        return PoseSample(
            float(self.times[i]),
            Pose(UnitQuaternion.from_array(self.quaternions[i]), self.translations[i]),
        )

    @property
    def start_time(self) -> float:
        return float(self.times[0])

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time

    def pose_at(self, t: float) -> Pose:
        return interpolate_at(self, t)

    def shifted(self, dt: float) -> "Trajectory":
        return Trajectory(self.times + float(dt), self.translations, self.quaternions, self.frames)

    def interp_arrays(self, ts):
        """Vectorized interpolation; returns (quaternions (n,4), translations (n,3)).

        Exact sample timestamps reproduce the stored rows bit-for-bit.
        """
        ts = np.asarray(ts, dtype=float).reshape(-1)
        times = self.times
        if ts.size and (ts.min() < times[0] or ts.max() > times[-1]):
            raise OutOfRangeError(
                f"timestamps outside span [{times[0]:.6f}, {times[-1]:.6f}]"
            )
        n = times.size
        if n == 1:
            # any in-range query equals the single sample timestamp
            reps = ts.size
            return (np.tile(self.quaternions[0], (reps, 1)),
                    np.tile(self.translations[0], (reps, 1)))
        idx = np.searchsorted(times, ts, side="left")
        exact = times[np.minimum(idx, n - 1)] == ts
        hi = np.clip(idx, 1, n - 1)
        lo = hi - 1
        denom = times[hi] - times[lo]
        denom = np.where(denom == 0.0, 1.0, denom)
        u = (ts - times[lo]) / denom
        trans = (1.0 - u)[:, None] * self.translations[lo] + u[:, None] * self.translations[hi]
        quats = _slerp_arrays(self.quaternions[lo], self.quaternions[hi], u)
        if np.any(exact):
            sel = np.minimum(idx[exact], n - 1)
            trans[exact] = self.translations[sel]
            quats[exact] = self.quaternions[sel]
        return quats, trans


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def compose(a: Pose, b: Pose) -> Pose:
    """Compose rigid transforms: (a ∘ b)(x) = a(b(x))."""
    q = quat_multiply(a.rotation.as_array(), b.rotation.as_array())
    t = a.rotation.rotate(b.translation) + a.translation
    return Pose(UnitQuaternion.from_array(q), t)


def inverse(p: Pose) -> Pose:
    qi = p.rotation.inverse()
    return Pose(qi, -qi.rotate(p.translation))


def slerp(q0: UnitQuaternion, q1: UnitQuaternion, u: float) -> UnitQuaternion:
    """Shortest-arc spherical interpolation; u in [0, 1]."""
    u = float(u)
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"interpolation parameter {u} outside [0, 1]")
    q = _slerp_arrays(q0.as_array(), q1.as_array(), np.array(u))
    return UnitQuaternion.from_array(q)


def interpolate_at(traj: Trajectory, t: float) -> Pose:
    """Pose at time t: linear translation, slerp rotation between brackets."""
    quats, trans = traj.interp_arrays([float(t)])
    return Pose(UnitQuaternion.from_array(quats[0]), trans[0])


def arc_length(traj: Trajectory, t_a: float, t_b: float) -> float:
    """Translation path length over [t_a, t_b], chord-summed at sample resolution."""
    t_a = float(t_a)
    t_b = float(t_b)
    if t_a >= t_b:
        raise ValueError("t_a must be strictly less than t_b")
    if len(traj) < 2:
        raise ValueError("arc length needs at least 2 samples")
    if t_a < traj.start_time or t_b > traj.end_time:
        raise OutOfRangeError(f"[{t_a}, {t_b}] outside trajectory span")
    inside = (traj.times > t_a) & (traj.times < t_b)
    _, ends = traj.interp_arrays([t_a, t_b])
    pts = np.vstack([ends[0], traj.translations[inside], ends[1]])
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def align_point_sets(reference_points, estimate_points) -> Pose:
    """Closed-form rigid transform A minimizing sum ||A(est_i) - ref_i||^2.

    Centroid subtraction, SVD of the cross-covariance, determinant-sign
    correction; no scale. Raises DegenerateError when both point sets are
    collinear (the optimal rotation is then ambiguous).
    """
    ref = np.asarray(reference_points, dtype=float).reshape(-1, 3)
    est = np.asarray(estimate_points, dtype=float).reshape(-1, 3)
    if ref.shape != est.shape:
        raise ValueError("point sets must have equal shapes")
    n = ref.shape[0]
    if n < 3:
        raise ValueError("alignment needs at least 3 point pairs")
    rc = ref.mean(axis=0)
    ec = est.mean(axis=0)
    r0 = ref - rc
    e0 = est - ec

    def _planar(spread):
        s = np.linalg.svd(spread, compute_uv=False)
        return s[1] > 1e-9 * s[0] if s[0] > 0.0 else False

    if not (_planar(r0) or _planar(e0)):
        raise DegenerateError("translation spread has rank < 2; rotation is ambiguous")
    h = e0.T @ r0 / n
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    q = UnitQuaternion.from_array(quat_from_matrix(rot))
    return Pose(q, rc - rot @ ec)


def umeyama_align(reference: Trajectory, estimate: Trajectory) -> Pose:
    """Rigid SE(3) aligning `estimate` onto `reference`, sample-for-sample."""
    if len(reference) != len(estimate):
        raise ValueError("trajectories must be associated sample-for-sample")
    return align_point_sets(reference.translations, estimate.translations)


def transform_trajectory(traj: Trajectory, pre: Pose | None = None,
                         post: Pose | None = None,
                         frames: tuple[str, str] | None = None) -> Trajectory:
    """Apply fixed transforms to every pose: new_t = pre ∘ pose_t ∘ post."""
    q = traj.quaternions
    t = traj.translations
    if post is not None:
        t = t + quat_rotate(q, post.translation)
        q = quat_multiply(q, post.rotation.as_array())
    if pre is not None:
        pq = pre.rotation.as_array()
        t = quat_rotate(pq, t) + pre.translation
        q = quat_multiply(pq, q)
    return Trajectory(traj.times, t, q, frames if frames is not None else traj.frames)
