"""Pose evaluation metrics: average vertex distance (ADD / ADD-S), mean 2D
reprojection error, the 5cm 5-degree check, and the area under the ADD
accuracy-vs-threshold curve. All threshold comparisons are strict.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, RigidPose, TriMesh, project, rotation_angle_deg

ADD_DIAMETER_FACTOR = 0.1
PROJ2D_THRESHOLD_PX = 5.0
CM_THRESHOLD_M = 0.05
DEG_THRESHOLD = 5.0
AUC_MAX_M = 0.10
AUC_STEP_M = 0.001


class MetricError(ValueError):
    pass


def _subsample(vertices: np.ndarray, limit: int = 2000) -> np.ndarray:
    if len(vertices) <= limit:
        return vertices
    idx = np.linspace(0, len(vertices) - 1, limit).astype(np.int64)
    return vertices[idx]


def add_error(pose_est: RigidPose, pose_gt: RigidPose, mesh: TriMesh,
              symmetric: bool = False, max_vertices: int = 2000) -> float:
    """Mean transformed-vertex distance in meters.

    Symmetric objects use the nearest transformed ground-truth vertex
    (brute force over a subsampled vertex set).
    """
    verts = _subsample(mesh.vertices, max_vertices)
    if len(verts) == 0:
        raise MetricError("empty mesh")
    est = verts @ pose_est.rotation.T + pose_est.translation
    gt = verts @ pose_gt.rotation.T + pose_gt.translation
    if not symmetric:
        return float(np.linalg.norm(est - gt, axis=1).mean())
    total = 0.0
    chunk = 512
    for i in range(0, len(est), chunk):
        d2 = ((est[i:i + chunk, None, :] - gt[None, :, :]) ** 2).sum(axis=2)
        total += np.sqrt(d2.min(axis=1)).sum()
    return float(total / len(est))


def proj2d_error(pose_est: RigidPose, pose_gt: RigidPose, mesh: TriMesh,
                 K: CameraIntrinsics, max_vertices: int = 2000) -> float:
    """Mean pixel distance between projections; +inf if the estimate puts any
    vertex behind the camera (counted incorrect downstream)."""
    verts = _subsample(mesh.vertices, max_vertices)
    uv_gt, z_gt = project(verts, pose_gt, K)
    if np.any(z_gt <= 1e-9):
        raise MetricError("ground-truth pose places vertices behind the camera")
    uv_est, z_est = project(verts, pose_est, K)
    if np.any(z_est <= 1e-9):
        return float("inf")
    return float(np.linalg.norm(uv_est - uv_gt, axis=1).mean())


def cm_deg_check(pose_est: RigidPose, pose_gt: RigidPose,
                 t_thresh: float = CM_THRESHOLD_M, r_thresh: float = DEG_THRESHOLD):
    """Returns (correct, translation_error_m, rotation_error_deg)."""
    t_err = float(np.linalg.norm(pose_est.translation - pose_gt.translation))
    r_err = rotation_angle_deg(pose_est.rotation, pose_gt.rotation)
    return (t_err < t_thresh and r_err < r_thresh), t_err, r_err


def auc(add_errors, max_threshold: float = AUC_MAX_M, step: float = AUC_STEP_M) -> float:
    """Trapezoid-rule area under the ADD accuracy-vs-threshold step curve over
    [0, max_threshold], normalized by max_threshold."""
    errs = np.asarray(list(add_errors), dtype=np.float64)
    if errs.size == 0:
        raise MetricError("auc needs at least one error value")
    thresholds = np.arange(0.0, max_threshold + step / 2, step)
    acc = (errs[None, :] < thresholds[:, None]).mean(axis=1)
    return float(np.trapezoid(acc, thresholds) / max_threshold)


@dataclass
class SampleMetrics:
    object_id: str
    sample_id: str
    pnp_ok: bool
    add_m: float = float("inf")
    add_correct: bool = False
    proj2d_px: float = float("inf")
    proj2d_correct: bool = False
    t_err_m: float = float("inf")
    r_err_deg: float = float("inf")
    cm_deg_correct: bool = False


@dataclass
class MetricReport:
    samples: list = field(default_factory=list)
    auc_max_m: float = AUC_MAX_M
    consistency: float | None = None
    notes: dict = field(default_factory=dict)

    def add_sample(self, s: SampleMetrics):
        self.samples.append(s)

    def object_ids(self):
        return sorted({s.object_id for s in self.samples})

    def _subset(self, object_id=None):
        return [s for s in self.samples if object_id is None or s.object_id == object_id]

    def accuracy(self, metric: str, object_id=None) -> float:
        subset = self._subset(object_id)
        if not subset:
            raise MetricError("no samples in report")
        key = {"add": "add_correct", "proj2d": "proj2d_correct",
               "cmdeg": "cm_deg_correct"}[metric]
        return float(np.mean([getattr(s, key) for s in subset]))

    def auc_value(self, object_id=None) -> float:
        subset = self._subset(object_id)
        if not subset:
            raise MetricError("no samples in report")
        return auc([s.add_m for s in subset], self.auc_max_m)

    def summary(self) -> dict:
        per_object = {}
        for oid in self.object_ids():
            per_object[oid] = {
                "n": len(self._subset(oid)),
                "add": self.accuracy("add", oid),
                "proj2d": self.accuracy("proj2d", oid),
                "cmdeg": self.accuracy("cmdeg", oid),
                "auc": self.auc_value(oid),
            }
        return {
            "auc_range_m": [0.0, self.auc_max_m],
            "n_samples": len(self.samples),
            "overall": {
                "add": self.accuracy("add"),
                "proj2d": self.accuracy("proj2d"),
                "cmdeg": self.accuracy("cmdeg"),
                "auc": self.auc_value(),
            },
            "per_object": per_object,
            "consistency": self.consistency,
            "notes": self.notes,
        }


def evaluate_sample(pose_est: RigidPose | None, pose_gt: RigidPose, mesh: TriMesh,
                    K: CameraIntrinsics, object_id: str, sample_id: str,
                    symmetric: bool = False) -> SampleMetrics:
    """Score one estimate; a missing estimate (PnP failure) is incorrect on
    every metric, never skipped."""
    if pose_est is None:
        return SampleMetrics(object_id=object_id, sample_id=sample_id, pnp_ok=False)
    a = add_error(pose_est, pose_gt, mesh, symmetric=symmetric)
    p = proj2d_error(pose_est, pose_gt, mesh, K)
    ok, t_err, r_err = cm_deg_check(pose_est, pose_gt)
    return SampleMetrics(
        object_id=object_id, sample_id=sample_id, pnp_ok=True,
        add_m=a, add_correct=bool(a < ADD_DIAMETER_FACTOR * mesh.diameter),
        proj2d_px=p, proj2d_correct=bool(p < PROJ2D_THRESHOLD_PX),
        t_err_m=t_err, r_err_deg=r_err, cm_deg_correct=ok)
