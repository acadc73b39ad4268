"""rotokin: rotation representations, kinematic chains, IK and pose metrics.

Estimation, manipulation and evaluation of full 3D human poses: joint
rotations plus joint locations. Ships interchangeable rotation forms with
losses and analytic gradients, a configurable kinematic tree with forward
kinematics and flip augmentation, a damped-least-squares inverse
kinematics solver with warm starting and pseudo-label generation, pose
metrics, and a synthetic-data testbed comparing rotation representations
and loss functions.
"""

from . import bench, ik, kernels, kinematics, metrics, seqio, so3, testbed
from .accel import NUMBA_ENABLED

__version__ = "0.1.0"

__all__ = [
    "bench",
    "ik",
    "kernels",
    "kinematics",
    "metrics",
    "seqio",
    "so3",
    "testbed",
    "NUMBA_ENABLED",
    "__version__",
]
