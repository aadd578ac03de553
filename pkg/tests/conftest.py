import numpy as np
import pytest

from sspose.geometry import CameraIntrinsics, TriMesh, axis_angle_matrix, RigidPose


def make_box_mesh(size=(0.1, 0.08, 0.06), offset=(0.0, 0.0, 0.0), colors=True):
    """Axis-aligned box with 8 vertices and 12 triangles."""
    sx, sy, sz = size
    ox, oy, oz = offset
    verts = np.array([[x * sx + ox, y * sy + oy, z * sz + oz]
                      for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=np.float64)
    faces = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1),
             (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, c, d in faces:
        tris += [[a, b, c], [a, c, d]]
    cols = None
    if colors:
        lo = verts.min(axis=0)
        span = verts.max(axis=0) - lo
        cols = 0.15 + 0.7 * (verts - lo) / span
    return TriMesh(verts, np.array(tris, dtype=np.int64), cols)


def random_pose(rng, depth=(0.5, 1.0)):
    axis = rng.normal(size=3)
    angle = rng.uniform(0, np.pi)
    R = axis_angle_matrix(axis, angle)
    t = np.array([rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                  rng.uniform(*depth)])
    return RigidPose(R, t)


@pytest.fixture
def box_mesh():
    return make_box_mesh()


@pytest.fixture
def cam_160():
    return CameraIntrinsics(fx=180.0, fy=180.0, cx=80.0, cy=80.0, width=160, height=160)
