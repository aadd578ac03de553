"""Self-supervised 6-DoF object pose estimation at desk scale."""

__version__ = "0.1.0"

from .geometry import CameraIntrinsics, RigidPose, TriMesh  # noqa: F401
