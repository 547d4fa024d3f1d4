"""Deterministic motion oracle: metronome-paced head-motion generators, a
consistent IMU stream derived from any trajectory, and a parameterized
degradation model that turns ground truth into a simulated device estimate
with known error structure.

World frame is Y-up; the body frame is X-right, Y-up, Z-backward (the device
looks along -Z). One beat is one metronome quarter note; a pattern cycle
spans `beats_per_cycle` beats, so the cycle period is beats_per_cycle*60/bpm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BadSpecError, TooShortError
from .geometry import (
    Trajectory,
    quat_from_rotvec,
    quat_multiply,
    quat_rotate,
    quat_to_rotvec,
    quat_conjugate,
)
from .io import ImuSample

__all__ = [
    "MotionSpec",
    "DegradationModel",
    "generate",
    "derive_imu",
    "degrade",
    "PATTERNS",
    "GRAVITY",
]

PATTERNS = ("shift", "patrol", "inspect", "rotate")
GRAVITY = 9.81  # m/s^2, along world -Y

_DEFAULT_BEATS = {"shift": 4, "rotate": 4, "patrol": 6, "inspect": 6}
_DEFAULT_AMPLITUDE = {
    "shift": 0.5,       # lateral excursion, m
    "rotate": math.pi,  # total yaw sweep, rad (180 degrees)
    "inspect": 1.0,     # arc radius, m
    "patrol": 2.0,      # line length, m
}


@dataclass(frozen=True)
class MotionSpec:
    """One metronome-paced motion pattern.

    `amplitude` is meters for translational patterns and radians of total yaw
    sweep for rotate. The inspect pattern walks its arc with a gentle vertical
    bob at step rate and keeps gaze fixed on a target `gaze_drop` meters below
    the walking plane, which is what a person inspecting a tabletop object
    does; the resulting pitch variation also makes lever-arm calibration
    observable from this pattern.
    """

    pattern: str
    bpm: float = 50.0
    beats_per_cycle: int | None = None
    amplitude: float | None = None
    duration: float = 30.0
    gt_rate: float = 100.0
    est_rate: float = 90.0
    bob_amplitude: float = 0.03   # inspect vertical bob, m
    gaze_drop: float = 0.4        # inspect gaze target below walking plane, m
    turn_fraction: float = 0.25   # patrol U-turn width as a fraction of a traverse

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise BadSpecError(f"unknown pattern {self.pattern!r}; expected one of {PATTERNS}")
        if self.bpm <= 0.0:
            raise BadSpecError("bpm must be positive")
        if self.beats_per_cycle is None:
            object.__setattr__(self, "beats_per_cycle", _DEFAULT_BEATS[self.pattern])
        elif self.beats_per_cycle < 1:
            raise BadSpecError("beats_per_cycle must be at least 1")
        if self.amplitude is None:
            object.__setattr__(self, "amplitude", _DEFAULT_AMPLITUDE[self.pattern])
        elif self.amplitude <= 0.0:
            raise BadSpecError("amplitude must be positive")
        if self.gt_rate <= 0.0 or self.est_rate <= 0.0:
            raise BadSpecError("sample rates must be positive")
        if self.duration < self.cycle_period:
            raise BadSpecError(
                f"duration {self.duration} s shorter than one cycle ({self.cycle_period} s)"
            )
        if not 0.0 < self.turn_fraction < 1.0:
            raise BadSpecError("turn_fraction must be in (0, 1)")

    @property
    def cycle_period(self) -> float:
        return self.beats_per_cycle * 60.0 / self.bpm

    @property
    def beat_period(self) -> float:
        return 60.0 / self.bpm


@dataclass(frozen=True)
class DegradationModel:
    """Error model applied to ground truth to simulate a device estimate.

    drift_rate is meters of pose error accumulated per meter traveled; the
    drift direction performs a slow random walk so seeds decorrelate while the
    per-segment drift magnitude stays at drift_rate. latency delays the
    reported pose (pose at t is the true pose at t - latency); clock_offset
    shifts the emitted timestamps. Deterministic given rng_seed.
    """

    trans_noise_std: float = 0.0
    rot_noise_std: float = 0.0
    drift_rate: float = 0.0
    latency: float = 0.0
    clock_offset: float = 0.0
    rng_seed: int = 0
    drift_direction_diffusion: float = 0.3  # rad per sqrt(meter)

    def __post_init__(self):
        for name in ("trans_noise_std", "rot_noise_std", "drift_rate", "latency",
                     "drift_direction_diffusion"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")


def _yaw_pitch_quats(yaw, pitch=None):
    """Quaternions for yaw about world +Y followed by pitch about body +X."""
    yaw = np.asarray(yaw, dtype=float)
    half = 0.5 * yaw
    qy = np.stack([np.zeros_like(yaw), np.sin(half), np.zeros_like(yaw), np.cos(half)], axis=-1)
    if pitch is None:
        return qy
    pitch = np.asarray(pitch, dtype=float)
    halfp = 0.5 * pitch
    qp = np.stack([np.sin(halfp), np.zeros_like(pitch), np.zeros_like(pitch), np.cos(halfp)], axis=-1)
    return quat_multiply(qy, qp)


def _gaze_rotation(positions, target):
    """Rotation (yaw then pitch, no roll) pointing the body -Z axis at target."""
    d = target[None, :] - positions
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    pitch = np.arcsin(np.clip(d[:, 1], -1.0, 1.0))
    yaw = np.arctan2(-d[:, 0], -d[:, 2])
    return _yaw_pitch_quats(yaw, pitch)


def generate(spec: MotionSpec) -> Trajectory:
    """Ground-truth trajectory for the motion pattern, sampled at gt_rate.

    shift: sinusoidal lateral translation of +/-amplitude, fixed forward gaze.
    rotate: body fixed at the origin, yaw sinusoid sweeping `amplitude` total.
    inspect: arc of radius `amplitude` traversed once per cycle, gaze fixed on
        the arc center (gaze_drop below the plane), vertical bob at step rate.
    patrol: back-and-forth line of length `amplitude`, one traverse per cycle,
        yaw aligned with velocity and cosine-eased U-turns.
    All profiles are C1-continuous. Deterministic for identical specs.
    """
    n = int(round(spec.duration * spec.gt_rate))
    if n < 2:
        raise BadSpecError("duration too short for the ground-truth rate")
    t = np.arange(n) / spec.gt_rate
    big_t = spec.cycle_period
    a = spec.amplitude

    if spec.pattern == "shift":
        x = a * np.sin(2.0 * math.pi * t / big_t)
        pos = np.stack([x, np.zeros(n), np.zeros(n)], axis=1)
        quats = np.tile([0.0, 0.0, 0.0, 1.0], (n, 1))

    elif spec.pattern == "rotate":
        pos = np.zeros((n, 3))
        yaw = 0.5 * a * np.sin(2.0 * math.pi * t / big_t)
        quats = _yaw_pitch_quats(yaw)

    elif spec.pattern == "inspect":
        theta = 0.5 * math.pi * (1.0 - np.cos(math.pi * t / big_t))
        bob = spec.bob_amplitude * np.sin(2.0 * math.pi * t / spec.beat_period)
        pos = np.stack([a * np.sin(theta), bob, a * np.cos(theta)], axis=1)
        target = np.array([0.0, -spec.gaze_drop, 0.0])
        quats = _gaze_rotation(pos, target)

    else:  # patrol
        x = 0.5 * a * (1.0 - np.cos(math.pi * t / big_t)) - 0.5 * a
        pos = np.stack([x, np.zeros(n), np.zeros(n)], axis=1)
        traverse = np.floor(t / big_t).astype(int)
        yaw_of = lambda k: np.where(k % 2 == 0, -0.5 * math.pi, 0.5 * math.pi)
        yaw = yaw_of(traverse).astype(float)
        w = spec.turn_fraction * big_t
        nearest = np.round(t / big_t).astype(int)
        in_turn = (np.abs(t - nearest * big_t) < 0.5 * w) & (nearest >= 1)
        if np.any(in_turn):
            s = (t[in_turn] - (nearest[in_turn] * big_t - 0.5 * w)) / w
            ease = 0.5 * (1.0 - np.cos(math.pi * s))
            y0 = yaw_of(nearest[in_turn] - 1).astype(float)
            y1 = yaw_of(nearest[in_turn]).astype(float)
            yaw[in_turn] = y0 + (y1 - y0) * ease
        quats = _yaw_pitch_quats(yaw)

    return Trajectory(t, pos, quats, frames=("W", "V"))


def derive_imu(traj: Trajectory, rate: float = 200.0, gravity_on: bool = True) -> list[ImuSample]:
    """IMU stream consistent with the trajectory, resampled at `rate`.

    Specific force: central-difference second derivative of translation at
    the trajectory's own samples, minus gravity, rotated into the body frame.
    Angular velocity: body-frame rotation-vector rate from quaternion central
    differences (2 * log-map over the bracketing interval).
    """
    if len(traj) < 3:
        raise TooShortError("IMU derivation needs at least 3 samples")
    times = traj.times
    pos = traj.translations
    quats = traj.quaternions

    dt_minus = times[1:-1] - times[:-2]
    dt_plus = times[2:] - times[1:-1]
    acc_w = 2.0 * ((pos[2:] - pos[1:-1]) / dt_plus[:, None]
                   - (pos[1:-1] - pos[:-2]) / dt_minus[:, None]) / (dt_plus + dt_minus)[:, None]

    rel = quat_multiply(quat_conjugate(quats[:-2]), quats[2:])
    angvel = quat_to_rotvec(rel) / (dt_plus + dt_minus)[:, None]

    inner_t = times[1:-1]
    start, stop = inner_t[0], inner_t[-1]
    m = int(math.floor((stop - start) * rate)) + 1
    ts = start + np.arange(m) / rate
    ts = ts[ts <= stop]

    def lin_resample(sig):
        return np.stack([np.interp(ts, inner_t, sig[:, i]) for i in range(3)], axis=1)

    acc_s = lin_resample(acc_w)
    angvel_s = lin_resample(angvel)
    q_s, _ = traj.interp_arrays(ts)

    if gravity_on:
        acc_s = acc_s - np.array([0.0, -GRAVITY, 0.0])
    acc_body = quat_rotate(quat_conjugate(q_s), acc_s)
    return [ImuSample(float(ti), ab, av) for ti, ab, av in zip(ts, acc_body, angvel_s)]


def degrade(traj: Trajectory, model: DegradationModel, est_rate: float = 90.0) -> Trajectory:
    """Simulated device estimate: resample at est_rate, accumulate direction-
    walked drift proportional to arc length, add white translation/rotation
    noise, delay poses by latency, shift timestamps by clock_offset."""
    if est_rate <= 0.0:
        raise ValueError("est_rate must be positive")
    start = traj.start_time + model.latency
    span = traj.end_time - start
    if span <= 0.0:
        raise ValueError("latency exceeds the trajectory span")
    n = int(math.floor(span * est_rate)) + 1
    ts = start + np.arange(n) / est_rate

    quats, trans = traj.interp_arrays(ts - model.latency)
    trans = trans.copy()
    quats = quats.copy()

    rng = np.random.default_rng(model.rng_seed)
    if model.drift_rate > 0.0:
        steps = np.linalg.norm(np.diff(trans, axis=0), axis=1)
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        wander = rng.standard_normal((n - 1, 3))
        drift = np.zeros((n, 3))
        d = np.zeros(3)
        sigma = model.drift_direction_diffusion
        for k in range(1, n):
            ds = steps[k - 1]
            if ds > 0.0:
                direction = direction + sigma * math.sqrt(ds) * wander[k - 1]
                direction /= np.linalg.norm(direction)
                d = d + model.drift_rate * ds * direction
            drift[k] = d
        trans += drift
    if model.trans_noise_std > 0.0:
        trans += model.trans_noise_std * rng.standard_normal((n, 3))
    if model.rot_noise_std > 0.0:
        rv = model.rot_noise_std * rng.standard_normal((n, 3))
        quats = quat_multiply(quats, quat_from_rotvec(rv))

    return Trajectory(ts + model.clock_offset, trans, quats, frames=traj.frames)
