"""trackbench: evaluate head-mounted tracking against a reference.

Submodules: geometry (SE(3) math and alignment), io (capture file formats),
timesync (clock-offset protocol), calibration (extrinsic + world alignment),
metrics (APE/RPE and reference substitution), features (sensor-feature
correlation), synth (motion and degradation oracles), cli (command line).
"""

from . import calibration, errors, features, geometry, io, metrics, synth, timesync
from .geometry import Pose, PoseSample, Trajectory, UnitQuaternion

__version__ = "0.1.0"

__all__ = [
    "calibration", "errors", "features", "geometry", "io", "metrics",
    "synth", "timesync",
    "Pose", "PoseSample", "Trajectory", "UnitQuaternion",
    "__version__",
]
