"""Shared builders for synthetic test data."""

from __future__ import annotations

import numpy as np
import pytest

from trackbench.geometry import Pose, Trajectory, UnitQuaternion, quat_normalize
from trackbench.synth import MotionSpec, generate


def random_unit_quaternion(rng) -> UnitQuaternion:
    return UnitQuaternion.from_array(quat_normalize(rng.standard_normal(4)))


def random_pose(rng, tmax: float = 1.0) -> Pose:
    return Pose(random_unit_quaternion(rng), rng.uniform(-tmax, tmax, 3))


def concat_trajectories(trajs, rate: float = 100.0) -> Trajectory:
    """Append trajectories end to end, one sample interval apart."""
    dt = 1.0 / rate
    times, trans, quats = [], [], []
    offset = 0.0
    for tr in trajs:
        times.append(tr.times + offset)
        trans.append(tr.translations)
        quats.append(tr.quaternions)
        offset = times[-1][-1] + dt
    return Trajectory(
        np.concatenate(times), np.vstack(trans), np.vstack(quats), frames=trajs[0].frames
    )


def straight_line(duration: float = 10.0, speed: float = 1.0,
                  rate: float = 100.0) -> Trajectory:
    """Constant-speed straight line along +x with identity orientation."""
    n = int(round(duration * rate)) + 1
    t = np.arange(n) / rate
    pos = np.stack([speed * t, np.zeros(n), np.zeros(n)], axis=1)
    return Trajectory(t, pos, np.tile([0.0, 0.0, 0.0, 1.0], (n, 1)), frames=("W", "V"))


@pytest.fixture(scope="session")
def inspect_rotate_gt() -> Trajectory:
    """Calibration excitation: an inspect pass followed by a rotate pass."""
    return concat_trajectories([
        generate(MotionSpec("inspect", bpm=75, duration=12.0)),
        generate(MotionSpec("rotate", bpm=75, duration=12.0)),
    ])
