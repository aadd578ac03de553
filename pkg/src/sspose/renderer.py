"""Software rasterizer: z-buffered triangle rendering with exact per-pixel
normalized object coordinates, plus pose sampling and scene compositing.

The model-frame surface point visible at each pixel center is interpolated
perspective-correctly, so denormalizing a nocs value and projecting it with
the sample's pose lands back on that pixel center (up to float rounding).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import CameraIntrinsics, RigidPose, TriMesh, project

NEAR_PLANE = 1e-4


class RenderError(RuntimeError):
    pass


@dataclass(frozen=True)
class LightParams:
    """One directional light; direction points from the scene toward the light."""

    direction: tuple = (0.0, 0.0, -1.0)
    intensity: float = 0.7
    ambient: float = 0.3


@dataclass
class RenderSample:
    rgb: np.ndarray        # (H, W, 3) in [0, 1]
    depth: np.ndarray      # (H, W) meters, 0 where empty
    mask: np.ndarray       # (H, W) bool
    nocs: np.ndarray       # (H, W, 3) in [0, 1] on mask
    pose: RigidPose
    K: CameraIntrinsics
    bbox: np.ndarray       # (4,) int: x0, y0, x1, y1 (exclusive end)
    object_id: str = ""


def _clip_near(cam_pts: np.ndarray, model_pts: np.ndarray):
    """Sutherland-Hodgman clip of one triangle against z = NEAR_PLANE.

    Model coordinates interpolate linearly because model->camera is affine.
    Returns polygon vertex lists (camera, model), possibly empty.
    """
    out_cam, out_model = [], []
    n = len(cam_pts)
    for i in range(n):
        a_c, a_m = cam_pts[i], model_pts[i]
        b_c, b_m = cam_pts[(i + 1) % n], model_pts[(i + 1) % n]
        a_in = a_c[2] > NEAR_PLANE
        b_in = b_c[2] > NEAR_PLANE
        if a_in:
            out_cam.append(a_c)
            out_model.append(a_m)
        if a_in != b_in:
            s = (NEAR_PLANE - a_c[2]) / (b_c[2] - a_c[2])
            out_cam.append(a_c + s * (b_c - a_c))
            out_model.append(a_m + s * (b_m - a_m))
    return out_cam, out_model


def rasterize(mesh: TriMesh, pose: RigidPose, K: CameraIntrinsics,
              resolution: tuple[int, int] | None = None,
              light: LightParams = LightParams(),
              base_color: tuple = (0.7, 0.7, 0.7)) -> RenderSample:
    """Render the mesh into an empty (black) background.

    Raises RenderError if no pixel is covered; callers resample the pose.
    """
    H, W = resolution if resolution is not None else (K.height, K.width)
    depth = np.zeros((H, W))
    point = np.zeros((H, W, 3))     # model-frame surface point per pixel
    tri_id = np.full((H, W), -1, dtype=np.int64)

    cam_all = mesh.vertices @ pose.rotation.T + pose.translation
    ext_lo = mesh.extent_min
    ext_size = np.where(mesh.extent_size > 0, mesh.extent_size, 1.0)

    for t_idx, tri in enumerate(mesh.triangles):
        cam = cam_all[tri]
        if np.all(cam[:, 2] <= NEAR_PLANE):
            continue
        if np.any(cam[:, 2] <= NEAR_PLANE):
            poly_c, poly_m = _clip_near(list(cam), list(mesh.vertices[tri]))
        else:
            poly_c, poly_m = list(cam), list(mesh.vertices[tri])
        if len(poly_c) < 3:
            continue
        poly_c = np.asarray(poly_c)
        poly_m = np.asarray(poly_m)
        pu = K.fx * poly_c[:, 0] / poly_c[:, 2] + K.cx
        pv = K.fy * poly_c[:, 1] / poly_c[:, 2] + K.cy
        for k in range(1, len(poly_c) - 1):
            _raster_triangle(
                np.array([pu[0], pu[k], pu[k + 1]]),
                np.array([pv[0], pv[k], pv[k + 1]]),
                poly_c[[0, k, k + 1], 2],
                poly_m[[0, k, k + 1]],
                t_idx, depth, point, tri_id, H, W)

    mask = depth > 0
    if not mask.any():
        raise RenderError("object fully off-screen")

    nocs = np.zeros((H, W, 3))
    nocs[mask] = (point[mask] - ext_lo) / ext_size
    np.clip(nocs, 0.0, 1.0, out=nocs)

    rgb = _shade(mesh, pose, mask, tri_id, point, light, base_color)

    ys, xs = np.nonzero(mask)
    bbox = np.array([xs.min(), ys.min(), xs.max() + 1, ys.max() + 1], dtype=np.int64)
    return RenderSample(rgb=rgb, depth=depth, mask=mask, nocs=nocs,
                        pose=pose, K=K, bbox=bbox)


def _raster_triangle(u, v, z, m, t_idx, depth, point, tri_id, H, W):
    """Rasterize one screen triangle with perspective-correct interpolation."""
    x0 = max(int(np.floor(u.min() - 0.5)), 0)
    x1 = min(int(np.ceil(u.max() - 0.5)) + 1, W)
    y0 = max(int(np.floor(v.min() - 0.5)), 0)
    y1 = min(int(np.ceil(v.max() - 0.5)) + 1, H)
    if x0 >= x1 or y0 >= y1:
        return
    area = (u[1] - u[0]) * (v[2] - v[0]) - (u[2] - u[0]) * (v[1] - v[0])
    if abs(area) < 1e-12:
        return
    px = np.arange(x0, x1) + 0.5
    py = np.arange(y0, y1) + 0.5
    gx, gy = np.meshgrid(px, py)
    # edge functions; normalized they are the screen-space barycentrics
    w0 = (u[2] - u[1]) * (gy - v[1]) - (v[2] - v[1]) * (gx - u[1])
    w1 = (u[0] - u[2]) * (gy - v[2]) - (v[0] - v[2]) * (gx - u[2])
    w2 = (u[1] - u[0]) * (gy - v[0]) - (v[1] - v[0]) * (gx - u[0])
    if area < 0:
        w0, w1, w2, a = -w0, -w1, -w2, -area
    else:
        a = area
    inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
    if not inside.any():
        return
    b0 = w0[inside] / a
    b1 = w1[inside] / a
    b2 = w2[inside] / a
    inv_z = b0 / z[0] + b1 / z[1] + b2 / z[2]
    zi = 1.0 / inv_z
    pt = (b0[:, None] * (m[0] / z[0]) + b1[:, None] * (m[1] / z[1])
          + b2[:, None] * (m[2] / z[2])) * zi[:, None]
    iy, ix = np.nonzero(inside)
    iy += y0
    ix += x0
    closer = (depth[iy, ix] == 0) | (zi < depth[iy, ix])
    iy, ix = iy[closer], ix[closer]
    depth[iy, ix] = zi[closer]
    point[iy, ix] = pt[closer]
    tri_id[iy, ix] = t_idx


def _shade(mesh, pose, mask, tri_id, point, light, base_color):
    H, W = mask.shape
    rgb = np.zeros((H, W, 3))
    if not mask.any():
        return rgb
    tris = mesh.triangles
    v = mesh.vertices
    n_model = np.cross(v[tris[:, 1]] - v[tris[:, 0]], v[tris[:, 2]] - v[tris[:, 0]])
    norms = np.linalg.norm(n_model, axis=1, keepdims=True)
    n_model = n_model / np.where(norms > 0, norms, 1.0)
    n_cam = n_model @ pose.rotation.T
    if mesh.colors is not None:
        albedo = mesh.colors[tris].mean(axis=1)
    else:
        albedo = np.tile(np.asarray(base_color, dtype=np.float64), (len(tris), 1))
    l_dir = np.asarray(light.direction, dtype=np.float64)
    l_dir = l_dir / np.linalg.norm(l_dir)

    tid = tri_id[mask]
    n_pix = n_cam[tid]
    # orient normals toward the camera (camera sits at the origin)
    cam_pt = point[mask] @ pose.rotation.T + pose.translation
    flip = np.sum(n_pix * cam_pt, axis=1) > 0
    n_pix[flip] = -n_pix[flip]
    diffuse = np.maximum(0.0, n_pix @ l_dir)
    shade = light.ambient + light.intensity * diffuse
    rgb[mask] = np.clip(albedo[tid] * shade[:, None], 0.0, 1.0)
    return rgb


def compose_scene(render: RenderSample, background: np.ndarray) -> RenderSample:
    """Replace empty pixels with a background image; labels stay untouched."""
    bg = np.asarray(background, dtype=np.float64)
    if bg.shape != render.rgb.shape:
        raise RenderError(f"background shape {bg.shape} != render shape {render.rgb.shape}")
    rgb = np.where(render.mask[:, :, None], render.rgb, bg)
    return replace(render, rgb=rgb)


def sample_pose(rng: np.random.Generator, mesh: TriMesh, K: CameraIntrinsics,
                depth_range: tuple[float, float],
                in_plane_range: tuple[float, float] = (-np.pi, np.pi),
                center_jitter: float = 0.10,
                margin_px: float = 1.0,
                max_tries: int = 100) -> RigidPose:
    """Uniform viewpoint-sphere rotation, uniform in-plane roll, depth uniform
    in [dmin, dmax]; the object center aims near the image center with jitter.
    Retries until the whole mesh projects inside the frame.
    """
    dmin, dmax = depth_range
    if not (0 < dmin < dmax):
        raise ValueError("need 0 < dmin < dmax")
    center = (mesh.extent_min + mesh.extent_max) / 2.0
    for _ in range(max_tries):
        azim = rng.uniform(0.0, 2 * np.pi)
        cos_elev = rng.uniform(-1.0, 1.0)
        roll = rng.uniform(*in_plane_range)
        elev = np.arccos(cos_elev)
        d = np.array([np.sin(elev) * np.cos(azim),
                      np.sin(elev) * np.sin(azim),
                      cos_elev])
        # orthonormal frame with the viewpoint direction as third row
        helper = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        e1 = np.cross(helper, d)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(d, e1)
        cr, sr = np.cos(roll), np.sin(roll)
        R = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]]) @ np.stack([e1, e2, d])

        z = rng.uniform(dmin, dmax)
        u_t = K.cx + rng.uniform(-center_jitter, center_jitter) * K.width
        v_t = K.cy + rng.uniform(-center_jitter, center_jitter) * K.height
        target = z * np.array([(u_t - K.cx) / K.fx, (v_t - K.cy) / K.fy, 1.0])
        t = target - R @ center
        pose = RigidPose(R, t)

        uv, depth = project(mesh.vertices, pose, K)
        if np.all(depth > NEAR_PLANE) and \
           np.all(uv[:, 0] >= margin_px) and np.all(uv[:, 0] <= K.width - margin_px) and \
           np.all(uv[:, 1] >= margin_px) and np.all(uv[:, 1] <= K.height - margin_px):
            return pose
    raise RenderError(f"no in-frame pose found in {max_tries} tries "
                      f"(depth range {depth_range} too tight for this mesh?)")
