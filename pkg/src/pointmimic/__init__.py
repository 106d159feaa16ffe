"""Keypoint-track imitation pipeline.

Two-view 2D keypoint tracks of a demonstrator hand are triangulated into 3D,
retargeted into robot poses and rigid robot keypoints, used to train a
transformer policy predicting chunked future point tracks, and executed as
6-DOF end-effector actions in a kinematic simulator.
"""

from . import control, dataio, errors, geometry, policy, retarget, simenv

__version__ = "0.1.0"

__all__ = ["control", "dataio", "errors", "geometry", "policy", "retarget", "simenv", "__version__"]
