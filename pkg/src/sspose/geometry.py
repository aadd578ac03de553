"""Rigid transforms, pinhole projection, mesh statistics and mesh file loading.

Conventions used everywhere in this package: right-handed camera frame with
+Z forward, +X right, +Y down; pixel (0, 0) at the top-left of the image and
pixel centers at integer + 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ORTHONORMALITY_TOL = 1e-9
MIN_DEPTH = 1e-9


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class RigidPose:
    """Rotation + translation of the model frame relative to the camera."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err >= ORTHONORMALITY_TOL:
            raise GeometryError(f"rotation not orthonormal (|R'R - I|_inf = {err:.3e})")
        if np.linalg.det(R) < 0:
            raise GeometryError("rotation has determinant -1 (reflection)")
        if not np.all(np.isfinite(t)):
            raise GeometryError("translation contains non-finite values")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map model-frame points (n, 3) into the camera frame."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def compose(self, other: "RigidPose") -> "RigidPose":
        """self applied after other: x -> self(other(x))."""
        return RigidPose(self.rotation @ other.rotation,
                         self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidPose":
        return RigidPose(self.rotation.T, -self.rotation.T @ self.translation)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise GeometryError("principal point outside image bounds")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass
class TriMesh:
    """Triangle mesh in the model frame (meters). Vertex colors optional."""

    vertices: np.ndarray            # (n, 3) float64
    triangles: np.ndarray           # (m, 3) int
    colors: np.ndarray | None = None  # (n, 3) in [0, 1], optional
    diameter: float = field(init=False)
    extent_min: np.ndarray = field(init=False)
    extent_max: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(self.colors) != len(self.vertices):
                raise GeometryError("vertex color count does not match vertex count")
        if self.triangles.size and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise GeometryError("triangle indices out of range")
        d, lo, hi = mesh_stats(self.vertices)
        self.diameter = d
        self.extent_min = lo
        self.extent_max = hi

    @property
    def extent_size(self) -> np.ndarray:
        return self.extent_max - self.extent_min


def project(points: np.ndarray, pose: RigidPose, K: CameraIntrinsics):
    """Project model-frame points to continuous pixel coordinates.

    Returns (uv, depth): uv is (n, 2), depth (n,). Points with depth <=
    MIN_DEPTH are behind the camera; their uv entries are NaN so they can
    never be mistaken for valid pixels. Callers test depth for cheirality.
    """
    cam = pose.transform(points)
    z = cam[:, 2]
    ok = z > MIN_DEPTH
    safe_z = np.where(ok, z, 1.0)
    u = K.fx * cam[:, 0] / safe_z + K.cx
    v = K.fy * cam[:, 1] / safe_z + K.cy
    uv = np.stack([u, v], axis=1)
    uv[~ok] = np.nan
    return uv, z


def rotation_angle_deg(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle theta = arccos((trace(Ra'Rb) - 1) / 2), in degrees.

    Small angles go through the equivalent 2*arcsin(|Ra - Rb|_F / (2 sqrt 2))
    form, which is well conditioned where arccos is not (identical inputs
    give exactly zero).
    """
    Ra = np.asarray(Ra, dtype=np.float64)
    Rb = np.asarray(Rb, dtype=np.float64)
    c = np.clip((np.trace(Ra.T @ Rb) - 1.0) / 2.0, -1.0, 1.0)
    if c > 0.5:
        s = np.clip(np.linalg.norm(Ra - Rb) / (2.0 * np.sqrt(2.0)), 0.0, 1.0)
        return float(np.degrees(2.0 * np.arcsin(s)))
    return float(np.degrees(np.arccos(c)))


def axis_angle_matrix(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rodrigues formula; axis need not be normalized."""
    a = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(a)
    if n == 0:
        return np.eye(3)
    a = a / n
    kx = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle_rad) * kx + (1 - np.cos(angle_rad)) * (kx @ kx)


def mesh_stats(vertices: np.ndarray):
    """Exact diameter (max pairwise distance) and axis-aligned extent box.

    O(n^2) scan, chunked; fine at desk scale (<= 20k vertices).
    """
    pts = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise GeometryError("empty vertex set")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    best = 0.0
    chunk = 2048
    for i in range(0, len(pts), chunk):
        block = pts[i:i + chunk]
        d2 = ((block[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        best = max(best, float(d2.max()))
    diameter = float(np.sqrt(best))
    if diameter == 0.0:
        raise GeometryError("degenerate mesh: all vertices coincide")
    return diameter, lo, hi


def load_obj(path) -> TriMesh:
    """ASCII OBJ subset: `v x y z [r g b]` and triangle `f` records, meters."""
    verts, colors, tris = [], [], []
    any_color = False
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            xyz = [float(x) for x in parts[1:4]]
            verts.append(xyz)
            if len(parts) >= 7:
                colors.append([float(x) for x in parts[4:7]])
                any_color = True
            else:
                colors.append([0.7, 0.7, 0.7])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) for tok in parts[1:]]
            if len(idx) != 3:
                raise GeometryError(f"non-triangle face in {path}: {line!r}")
            tris.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    if not verts:
        raise GeometryError(f"no vertices found in {path}")
    return TriMesh(np.array(verts), np.array(tris, dtype=np.int64),
                   np.array(colors) if any_color else None)


def load_ply(path) -> TriMesh:
    """ASCII PLY subset: vertex x/y/z (+ optional red/green/blue) and face lists."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise GeometryError(f"not a PLY file: {path}")
    n_vert = n_face = 0
    vert_props = []
    in_vertex_element = False
    i = 1
    while i < len(lines):
        tok = lines[i].split()
        i += 1
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise GeometryError("only ASCII PLY is supported")
        if tok[0] == "element":
            in_vertex_element = tok[1] == "vertex"
            if tok[1] == "vertex":
                n_vert = int(tok[2])
            elif tok[1] == "face":
                n_face = int(tok[2])
        elif tok[0] == "property" and in_vertex_element and tok[1] != "list":
            vert_props.append(tok[2])
        elif tok[0] == "end_header":
            break
    body = [ln.split() for ln in lines[i:] if ln.strip()]
    if len(body) < n_vert + n_face:
        raise GeometryError(f"truncated PLY file: {path}")
    ix, iy, iz = (vert_props.index(k) for k in ("x", "y", "z"))
    verts = np.array([[float(row[j]) for j in (ix, iy, iz)] for row in body[:n_vert]])
    colors = None
    if all(k in vert_props for k in ("red", "green", "blue")):
        ir, ig, ib = (vert_props.index(k) for k in ("red", "green", "blue"))
        colors = np.array([[float(row[j]) / 255.0 for j in (ir, ig, ib)]
                           for row in body[:n_vert]])
    tris = []
    for row in body[n_vert:n_vert + n_face]:
        cnt = int(row[0])
        if cnt != 3:
            raise GeometryError("only triangle faces are supported")
        tris.append([int(row[1]), int(row[2]), int(row[3])])
    return TriMesh(verts, np.array(tris, dtype=np.int64), colors)


def load_mesh(path) -> TriMesh:
    p = Path(path)
    if p.suffix.lower() == ".obj":
        return load_obj(p)
    if p.suffix.lower() == ".ply":
        return load_ply(p)
    raise GeometryError(f"unsupported mesh format: {p.suffix}")
