"""Multi-camera, multi-map visual-inertial localization toolkit.

Library layout:

* :mod:`mapvins.geometry`    -- SO(3)/SE(3) primitives, JPL quaternions.
* :mod:`mapvins.mapmodel`    -- pre-built map data model and file format.
* :mod:`mapvins.sim`         -- synthetic scenarios: trajectories, IMU, matches.
* :mod:`mapvins.solvers`     -- IMU-aided 2-point/MC2P solvers and RANSAC.
* :mod:`mapvins.initializer` -- deterministic 4DoF initialization.
* :mod:`mapvins.msckf`       -- multi-map Schmidt-MSCKF filter.
* :mod:`mapvins.metrics`     -- causal evaluation metrics.
* :mod:`mapvins.harness`     -- end-to-end experiments, configs, reports.
"""

from mapvins.geometry import (
    GRAVITY,
    RigidTransform,
    Rotation,
    YawPose,
    compose,
    transform_point,
    yaw_rotation,
)

__all__ = [
    "GRAVITY",
    "RigidTransform",
    "Rotation",
    "YawPose",
    "compose",
    "transform_point",
    "yaw_rotation",
]

__version__ = "0.1.0"
