"""Robust pose recovery from dense 2D-3D correspondences.

Minimal hypotheses come from EPnP on 4-point samples (P3P with a fourth-point
disambiguation is available behind a flag for cross-validation); consensus by
reprojection threshold with a cheirality requirement; the winning inlier set
is polished by a Levenberg-Marquardt reprojection minimizer over an
axis-angle + translation increment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coordmap import CorrespondenceSet
from .geometry import CameraIntrinsics, RigidPose, axis_angle_matrix


@dataclass(frozen=True)
class RansacConfig:
    inlier_threshold_px: float = 2.0
    confidence: float = 0.99
    max_iterations: int = 2000
    min_correspondences: int = 6
    refine_iterations: int = 50
    use_p3p: bool = False

    def __post_init__(self):
        if not (0 < self.confidence < 1):
            raise ValueError("confidence must be in (0, 1)")
        if self.inlier_threshold_px <= 0:
            raise ValueError("inlier threshold must be positive")


@dataclass
class PoseEstimate:
    ok: bool
    pose: RigidPose | None = None
    inlier_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    mean_error_px: float = float("inf")
    converged: bool = False
    reason: str = ""


def _project_cam(cam: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    z = cam[:, 2]
    return np.stack([K.fx * cam[:, 0] / z + K.cx,
                     K.fy * cam[:, 1] / z + K.cy], axis=1)


def reprojection_errors(pose: RigidPose, xyz: np.ndarray, uv: np.ndarray,
                        K: CameraIntrinsics):
    """Per-point pixel error and camera depth (error is +inf behind camera)."""
    cam = xyz @ pose.rotation.T + pose.translation
    z = cam[:, 2]
    ok = z > 1e-9
    err = np.full(len(xyz), np.inf)
    if ok.any():
        proj = _project_cam(cam[ok], K)
        err[ok] = np.linalg.norm(proj - uv[ok], axis=1)
    return err, z


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def _kabsch(model: np.ndarray, cam: np.ndarray):
    """Rigid fit cam ~= R @ model + t (no scale)."""
    mc = model.mean(axis=0)
    cc = cam.mean(axis=0)
    H = (model - mc).T @ (cam - cc)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return R, cc - R @ mc


# ---------------------------------------------------------------------------
# EPnP (Lepetit et al.): control points, nullspace betas, Gauss-Newton polish

_BETA_PAIRS = [(i, j) for i in range(4) for j in range(i, 4)]   # 10 monomials


def epnp(xyz: np.ndarray, uv: np.ndarray, K: CameraIntrinsics) -> RigidPose | None:
    """Solve PnP for n >= 4 points; returns None on degenerate input."""
    n = len(xyz)
    if n < 4:
        return None
    centroid = xyz.mean(axis=0)
    centered = xyz - centroid
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)      # ascending
    if evals[2] <= 0 or evals[0] / evals[2] < 1e-10:
        return None                          # (near-)coplanar sample
    ctrl = np.vstack([centroid,
                      centroid + np.sqrt(evals[::-1])[:, None] * evecs.T[::-1]])

    A = np.vstack([ctrl.T, np.ones(4)])      # 4x4, columns are control points
    rhs = np.vstack([xyz.T, np.ones(n)])
    try:
        alphas = np.linalg.solve(A, rhs).T   # (n, 4)
    except np.linalg.LinAlgError:
        return None

    M = np.zeros((2 * n, 12))
    for j in range(4):
        M[0::2, 3 * j + 0] = alphas[:, j] * K.fx
        M[0::2, 3 * j + 2] = alphas[:, j] * (K.cx - uv[:, 0])
        M[1::2, 3 * j + 1] = alphas[:, j] * K.fy
        M[1::2, 3 * j + 2] = alphas[:, j] * (K.cy - uv[:, 1])
    _, vecs = np.linalg.eigh(M.T @ M)
    basis = vecs[:, :4].T.reshape(4, 4, 3)   # 4 kernel vectors, each 4 ctrl pts

    dv = basis[:, _ctrl_pairs()[0], :] - basis[:, _ctrl_pairs()[1], :]  # (4, 6, 3)
    rho = np.sum((ctrl[_ctrl_pairs()[0]] - ctrl[_ctrl_pairs()[1]]) ** 2, axis=1)
    L = np.zeros((6, 10))
    for col, (a, b) in enumerate(_BETA_PAIRS):
        f = 1.0 if a == b else 2.0
        L[:, col] = f * np.sum(dv[a] * dv[b], axis=1)

    best_pose, best_err = None, np.inf
    for approx in (_betas_approx1, _betas_approx2, _betas_approx3):
        betas = _gauss_newton_betas(approx(L, rho), dv, rho)
        pose = _pose_from_betas(betas, basis, alphas, xyz)
        if pose is None:
            continue
        err, z = reprojection_errors(pose, xyz, uv, K)
        score = err[np.isfinite(err)].sum() + 1e6 * np.count_nonzero(z <= 0)
        if score < best_err:
            best_err, best_pose = score, pose
    return best_pose


def _ctrl_pairs():
    idx = [(a, b) for a in range(4) for b in range(a + 1, 4)]
    return np.array([p[0] for p in idx]), np.array([p[1] for p in idx])


def _col(pairs):
    return [_BETA_PAIRS.index(p) for p in pairs]


def _betas_approx1(L, rho):
    b = np.linalg.lstsq(L[:, _col([(0, 0), (0, 1), (0, 2), (0, 3)])], rho, rcond=None)[0]
    b1 = np.sqrt(abs(b[0]))
    s = 1.0 if b[0] >= 0 else -1.0
    return np.array([b1, s * b[1] / b1, s * b[2] / b1, s * b[3] / b1]) if b1 > 0 else np.zeros(4)


def _betas_approx2(L, rho):
    b = np.linalg.lstsq(L[:, _col([(0, 0), (0, 1), (1, 1)])], rho, rcond=None)[0]
    if b[0] < 0:
        b1 = np.sqrt(-b[0])
        b2 = np.sqrt(-b[2]) if b[2] < 0 else 0.0
    else:
        b1 = np.sqrt(b[0])
        b2 = np.sqrt(b[2]) if b[2] > 0 else 0.0
    if b[1] < 0:
        b1 = -b1
    return np.array([b1, b2, 0.0, 0.0])


def _betas_approx3(L, rho):
    b = np.linalg.lstsq(L[:, _col([(0, 0), (0, 1), (1, 1), (0, 2), (1, 2)])], rho,
                        rcond=None)[0]
    if b[0] < 0:
        b1 = np.sqrt(-b[0])
        b2 = np.sqrt(-b[2]) if b[2] < 0 else 0.0
    else:
        b1 = np.sqrt(b[0])
        b2 = np.sqrt(b[2]) if b[2] > 0 else 0.0
    if b[1] < 0:
        b1 = -b1
    b3 = b[3] / b1 if b1 != 0 else 0.0
    return np.array([b1, b2, b3, 0.0])


def _gauss_newton_betas(betas: np.ndarray, dv: np.ndarray, rho: np.ndarray,
                        iters: int = 10) -> np.ndarray:
    b = betas.copy()
    for _ in range(iters):
        combo = np.tensordot(b, dv, axes=([0], [0]))       # (6, 3)
        resid = np.sum(combo ** 2, axis=1) - rho
        J = 2.0 * np.sum(combo[None, :, :] * dv, axis=2).T  # (6, 4)
        try:
            step = np.linalg.lstsq(J, -resid, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        b = b + step
        if np.linalg.norm(step) < 1e-12:
            break
    return b


def _pose_from_betas(betas, basis, alphas, xyz):
    ctrl_cam = np.tensordot(betas, basis, axes=([0], [0]))  # (4, 3)
    cam = alphas @ ctrl_cam
    if cam[:, 2].mean() < 0:
        cam = -cam
    if np.any(cam[:, 2] <= 0):
        return None
    R, t = _kabsch(xyz, cam)
    try:
        return RigidPose(_orthonormalize(R), t)
    except ValueError:
        return None


# ---------------------------------------------------------------------------
# P3P (Grunert's quartic) with fourth-point disambiguation

def p3p(xyz: np.ndarray, uv: np.ndarray, K: CameraIntrinsics) -> list[RigidPose]:
    """Up to four pose solutions from the first three correspondences."""
    rays = np.stack([(uv[:, 0] - K.cx) / K.fx,
                     (uv[:, 1] - K.cy) / K.fy,
                     np.ones(len(uv))], axis=1)
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    P = xyz[:3]
    f1, f2, f3 = rays[:3]
    a2 = np.sum((P[1] - P[2]) ** 2)
    b2 = np.sum((P[0] - P[2]) ** 2)
    c2 = np.sum((P[0] - P[1]) ** 2)
    if min(a2, b2, c2) < 1e-18:
        return []
    cos_a = float(f2 @ f3)
    cos_b = float(f1 @ f3)
    cos_g = float(f1 @ f2)
    q = (a2 - c2) / b2
    r = (a2 + c2) / b2
    A4 = (q - 1) ** 2 - 4 * (c2 / b2) * cos_a ** 2
    A3 = 4 * (q * (1 - q) * cos_b - (1 - r) * cos_a * cos_g + 2 * (c2 / b2) * cos_a ** 2 * cos_b)
    A2 = 2 * (q ** 2 - 1 + 2 * q ** 2 * cos_b ** 2 + 2 * ((b2 - c2) / b2) * cos_a ** 2
              - 4 * r * cos_a * cos_b * cos_g + 2 * ((b2 - a2) / b2) * cos_g ** 2)
    A1 = 4 * (-q * (1 + q) * cos_b + 2 * (a2 / b2) * cos_g ** 2 * cos_b
              - (1 - r) * cos_a * cos_g)
    A0 = (1 + q) ** 2 - 4 * (a2 / b2) * cos_g ** 2
    coeffs = np.array([A4, A3, A2, A1, A0])
    if abs(coeffs[0]) < 1e-14 and abs(coeffs).max() < 1e-14:
        return []
    roots = np.roots(coeffs)
    poses = []
    for v in roots:
        if abs(v.imag) > 1e-8 or v.real <= 0:
            continue
        v = float(v.real)
        denom = 2 * (cos_g - v * cos_a)
        if abs(denom) < 1e-12:
            continue
        u = ((-1 + q) * v ** 2 - 2 * q * cos_b * v + 1 + q) / denom
        if u <= 0:
            continue
        s1sq = b2 / (1 + v ** 2 - 2 * v * cos_b)
        if s1sq <= 0:
            continue
        s1 = float(np.sqrt(s1sq))
        cam = np.stack([s1 * f1, u * s1 * f2, v * s1 * f3])
        R, t = _kabsch(P, cam)
        try:
            poses.append(RigidPose(_orthonormalize(R), t))
        except ValueError:
            continue
    return poses


def _minimal_solve(xyz, uv, K, use_p3p):
    if not use_p3p:
        pose = epnp(xyz, uv, K)
        return [pose] if pose is not None else []
    cands = p3p(xyz, uv, K)
    if not cands:
        return []
    # fourth point picks the physically correct quartic branch
    best, best_err = None, np.inf
    for pose in cands:
        err, z = reprojection_errors(pose, xyz[3:4], uv[3:4], K)
        e = err[0] if z[0] > 0 else np.inf
        if e < best_err:
            best, best_err = pose, e
    return [best] if best is not None else []


# ---------------------------------------------------------------------------
# Levenberg-Marquardt refinement over (axis-angle, translation)

def refine_lm(pose: RigidPose, xyz: np.ndarray, uv: np.ndarray, K: CameraIntrinsics,
              max_iterations: int = 50):
    """Minimize summed squared reprojection error; returns (pose, converged).

    Left-multiplied axis-angle increment on the rotation, additive on the
    translation. Damping starts at 1e-3, x10 on a rejected step, /10 on an
    accepted one. Singular normal equations return the input pose with
    converged=False.
    """
    R = pose.rotation.copy()
    t = pose.translation.copy()
    lam = 1e-3

    def cost_resid(Rc, tc):
        cam = xyz @ Rc.T + tc
        z = cam[:, 2]
        if np.any(z <= 1e-9):
            return None, None, None
        proj = _project_cam(cam, K)
        resid = (proj - uv).reshape(-1)
        return float(resid @ resid), resid, cam

    cost, resid, cam = cost_resid(R, t)
    if cost is None:
        return PoseEstimate(ok=False, pose=pose, converged=False,
                            reason="points behind camera at start")
    converged = False
    for _ in range(max_iterations):
        x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
        d_proj = np.zeros((len(xyz), 2, 3))
        d_proj[:, 0, 0] = K.fx / z
        d_proj[:, 0, 2] = -K.fx * x / z ** 2
        d_proj[:, 1, 1] = K.fy / z
        d_proj[:, 1, 2] = -K.fy * y / z ** 2
        # d(exp(w) X)/dw at w=0 is -[X]_x
        neg_skew = np.zeros((len(xyz), 3, 3))
        neg_skew[:, 0, 1] = cam[:, 2]
        neg_skew[:, 0, 2] = -cam[:, 1]
        neg_skew[:, 1, 0] = -cam[:, 2]
        neg_skew[:, 1, 2] = cam[:, 0]
        neg_skew[:, 2, 0] = cam[:, 1]
        neg_skew[:, 2, 1] = -cam[:, 0]
        J = np.concatenate([d_proj @ neg_skew, d_proj], axis=2).reshape(-1, 6)
        g = J.T @ resid
        H = J.T @ J
        step = None
        try:
            step = np.linalg.solve(H + lam * np.eye(6), -g)
        except np.linalg.LinAlgError:
            return PoseEstimate(ok=True, pose=RigidPose(_orthonormalize(R), t),
                                converged=False, reason="singular normal equations")
        if not np.all(np.isfinite(step)):
            return PoseEstimate(ok=True, pose=RigidPose(_orthonormalize(R), t),
                                converged=False, reason="non-finite step")
        if np.linalg.norm(step) < 1e-12:
            converged = True
            break
        R_new = axis_angle_matrix(step[:3], float(np.linalg.norm(step[:3]))) @ R \
            if np.linalg.norm(step[:3]) > 0 else R
        t_new = t + step[3:]
        new_cost, new_resid, new_cam = cost_resid(R_new, t_new)
        if new_cost is not None and new_cost < cost:
            gain = cost - new_cost
            R, t, resid, cam = R_new, t_new, new_resid, new_cam
            cost = new_cost
            lam = max(lam / 10.0, 1e-12)
            if gain < 1e-10:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e12:
                break
    return PoseEstimate(ok=True, pose=RigidPose(_orthonormalize(R), t),
                        converged=converged, mean_error_px=np.sqrt(cost / len(xyz)))


# ---------------------------------------------------------------------------
# RANSAC

def ransac_pnp(corr: CorrespondenceSet, K: CameraIntrinsics,
               config: RansacConfig = RansacConfig(),
               rng: np.random.Generator | None = None) -> PoseEstimate:
    """Robust pose from correspondences; returns a failure result rather than
    a fabricated pose when consensus cannot be reached."""
    if rng is None:
        rng = np.random.default_rng(0)
    xyz = np.asarray(corr.xyz, dtype=np.float64)
    uv = np.asarray(corr.uv, dtype=np.float64)
    n = len(xyz)
    if n < config.min_correspondences:
        return PoseEstimate(ok=False, reason=f"{n} correspondences < "
                            f"minimum {config.min_correspondences}")
    best_inliers = None
    best_pose = None
    best_count = 0
    best_err = np.inf
    max_iters = config.max_iterations
    it = 0
    while it < max_iters:
        it += 1
        pick = rng.choice(n, size=4, replace=False)
        for pose in _minimal_solve(xyz[pick], uv[pick], K, config.use_p3p):
            err, z = reprojection_errors(pose, xyz, uv, K)
            inliers = (err <= config.inlier_threshold_px) & (z > 0)
            count = int(np.count_nonzero(inliers))
            if count < 4:
                continue
            mean_err = float(err[inliers].mean())
            if count > best_count or (count == best_count and mean_err < best_err):
                best_count = count
                best_err = mean_err
                best_inliers = inliers
                best_pose = pose
                w = count / n
                if w >= 1.0:
                    max_iters = it
                else:
                    denom = np.log1p(-min(w ** 4, 1 - 1e-12))
                    needed = int(np.ceil(np.log(1 - config.confidence) / denom))
                    max_iters = min(config.max_iterations, max(needed, 1))
    if best_inliers is None:
        return PoseEstimate(ok=False, reason="no hypothesis reached 4 inliers")
    idx = np.nonzero(best_inliers)[0]
    # re-solve on all inliers for a better LM start; fall back to the winning
    # minimal hypothesis when the inlier set is degenerate for EPnP
    start = epnp(xyz[idx], uv[idx], K) or best_pose
    refined = refine_lm(start, xyz[idx], uv[idx], K,
                        max_iterations=config.refine_iterations)
    pose = refined.pose
    err, z = reprojection_errors(pose, xyz, uv, K)
    final_inliers = (err <= config.inlier_threshold_px) & (z > 0)
    fidx = np.nonzero(final_inliers)[0]
    if len(fidx) < 4:
        fidx = idx
    mean_err = float(err[fidx][np.isfinite(err[fidx])].mean()) if len(fidx) else np.inf
    return PoseEstimate(ok=True, pose=pose, inlier_indices=fidx,
                        mean_error_px=mean_err, converged=refined.converged)
