import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sspose.geometry import (CameraIntrinsics, GeometryError, RigidPose,
                             axis_angle_matrix, load_obj, load_ply, mesh_stats,
                             project, rotation_angle_deg)
from conftest import make_box_mesh, random_pose


def project_oracle(points, R, t, fx, fy, cx, cy):
    """Independent straight-line projection, scalar math."""
    out = []
    for p in np.asarray(points, dtype=float):
        q = [R[0][0] * p[0] + R[0][1] * p[1] + R[0][2] * p[2] + t[0],
             R[1][0] * p[0] + R[1][1] * p[1] + R[1][2] * p[2] + t[1],
             R[2][0] * p[0] + R[2][1] * p[1] + R[2][2] * p[2] + t[2]]
        out.append((fx * q[0] / q[2] + cx, fy * q[1] / q[2] + cy, q[2]))
    return np.array(out)


def test_project_principal_axis_point():
    K = CameraIntrinsics(100, 100, 32, 32, 64, 64)
    pose = RigidPose(np.eye(3), [0, 0, 1])
    uv, z = project(np.array([[0.0, 0.0, 0.0]]), pose, K)
    assert np.allclose(uv[0], [32, 32])
    assert z[0] == pytest.approx(1.0)


def test_project_one_pixel_offset():
    K = CameraIntrinsics(100, 100, 32, 32, 64, 64)
    pose = RigidPose(np.eye(3), [0, 0, 1])
    uv, _ = project(np.array([[0.01, 0.0, 0.0]]), pose, K)
    assert np.allclose(uv[0], [33, 32])


def test_project_matches_independent_oracle():
    rng = np.random.default_rng(7)
    K = CameraIntrinsics(123.0, 117.0, 31.0, 29.5, 64, 64)
    pose = random_pose(rng)
    pts = rng.uniform(-0.05, 0.05, size=(50, 3))
    uv, z = project(pts, pose, K)
    ref = project_oracle(pts, pose.rotation, pose.translation,
                         K.fx, K.fy, K.cx, K.cy)
    assert np.abs(uv - ref[:, :2]).max() < 1e-9
    assert np.abs(z - ref[:, 2]).max() < 1e-12


def test_project_flags_behind_camera():
    K = CameraIntrinsics(100, 100, 32, 32, 64, 64)
    pose = RigidPose(np.eye(3), [0, 0, -1.0])
    uv, z = project(np.array([[0.0, 0.0, 0.0]]), pose, K)
    assert z[0] < 0
    assert np.all(np.isnan(uv[0]))


def test_project_backproject_roundtrip():
    rng = np.random.default_rng(3)
    K = CameraIntrinsics(150.0, 150.0, 80.0, 80.0, 160, 160)
    pose = random_pose(rng)
    pts = rng.uniform(-0.04, 0.04, size=(30, 3))
    uv, z = project(pts, pose, K)
    cam = np.stack([(uv[:, 0] - K.cx) / K.fx * z,
                    (uv[:, 1] - K.cy) / K.fy * z, z], axis=1)
    back = (cam - pose.translation) @ pose.rotation
    assert np.abs(back - pts).max() < 1e-9


def test_rotation_angle_identity_and_90():
    assert rotation_angle_deg(np.eye(3), np.eye(3)) == 0
    Rz90 = axis_angle_matrix([0, 0, 1], np.pi / 2)
    assert rotation_angle_deg(np.eye(3), Rz90) == pytest.approx(90.0, abs=1e-9)


def test_rotation_angle_matches_rodrigues_construction():
    rng = np.random.default_rng(11)
    for _ in range(50):
        axis = rng.normal(size=3)
        angle = rng.uniform(0, np.pi)
        R = axis_angle_matrix(axis, angle)
        assert rotation_angle_deg(np.eye(3), R) == pytest.approx(np.degrees(angle), abs=1e-7)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=30, deadline=None)
def test_rotation_angle_symmetric(seed):
    rng = np.random.default_rng(seed)
    Ra = axis_angle_matrix(rng.normal(size=3), rng.uniform(0, np.pi))
    Rb = axis_angle_matrix(rng.normal(size=3), rng.uniform(0, np.pi))
    assert rotation_angle_deg(Ra, Rb) == pytest.approx(rotation_angle_deg(Rb, Ra), abs=1e-9)
    assert rotation_angle_deg(Ra, Ra) < 1e-7


def test_mesh_stats_unit_cube():
    verts = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
                     dtype=np.float64)
    d, lo, hi = mesh_stats(verts)
    assert d == pytest.approx(np.sqrt(3), abs=1e-12)
    assert np.allclose(lo, 0) and np.allclose(hi, 1)


def test_mesh_stats_degenerate_raises():
    with pytest.raises(GeometryError):
        mesh_stats(np.zeros((5, 3)))
    with pytest.raises(GeometryError):
        mesh_stats(np.zeros((0, 3)))


def brute_force_diameter(pts):
    best = 0.0
    for j in range(len(pts)):           # deliberately different loop order
        for i in range(j):
            d = float(np.sqrt(((pts[i] - pts[j]) ** 2).sum()))
            best = max(best, d)
    return best


def test_mesh_stats_matches_brute_force():
    rng = np.random.default_rng(5)
    pts = rng.uniform(-1, 1, size=(120, 3))
    d, _, _ = mesh_stats(pts)
    assert d == pytest.approx(brute_force_diameter(pts), abs=1e-12)


def test_diameter_rigid_invariance():
    rng = np.random.default_rng(9)
    pts = rng.uniform(-1, 1, size=(60, 3))
    d0, _, _ = mesh_stats(pts)
    pose = random_pose(rng)
    d1, _, _ = mesh_stats(pts @ pose.rotation.T + pose.translation)
    assert d1 == pytest.approx(d0, abs=1e-9)


def test_rigid_pose_rejects_bad_rotation():
    with pytest.raises(GeometryError):
        RigidPose(np.eye(3) * 1.01, [0, 0, 0])
    with pytest.raises(GeometryError):
        RigidPose(np.diag([1.0, 1.0, -1.0]), [0, 0, 0])
    with pytest.raises(GeometryError):
        RigidPose(np.eye(3), [0, 0, np.nan])


def test_intrinsics_validation():
    with pytest.raises(GeometryError):
        CameraIntrinsics(-1, 100, 32, 32, 64, 64)
    with pytest.raises(GeometryError):
        CameraIntrinsics(100, 100, 999, 32, 64, 64)


def test_obj_ply_roundtrip(tmp_path):
    mesh = make_box_mesh()
    obj = tmp_path / "box.obj"
    lines = [f"v {x} {y} {z} {r} {g} {b}"
             for (x, y, z), (r, g, b) in zip(mesh.vertices, mesh.colors)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    obj.write_text("\n".join(lines))
    loaded = load_obj(obj)
    assert np.allclose(loaded.vertices, mesh.vertices)
    assert np.array_equal(loaded.triangles, mesh.triangles)
    assert np.allclose(loaded.colors, mesh.colors)

    ply = tmp_path / "box.ply"
    header = ["ply", "format ascii 1.0", f"element vertex {len(mesh.vertices)}",
              "property float x", "property float y", "property float z",
              f"element face {len(mesh.triangles)}",
              "property list uchar int vertex_indices", "end_header"]
    body = [f"{x} {y} {z}" for x, y, z in mesh.vertices]
    body += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    ply.write_text("\n".join(header + body))
    loaded = load_ply(ply)
    assert np.allclose(loaded.vertices, mesh.vertices)
    assert np.array_equal(loaded.triangles, mesh.triangles)
