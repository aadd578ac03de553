"""Training objectives: the masked coordinate self-supervision losses (visible
region vs inpainting variant), the self-supervised segmentation loss, the
supervised synthetic loss, their weighted hybrid composition, and the
image/output consistency diagnostic.

Pseudo labels are plain numpy arrays: gradients cannot flow through them by
construction. Both masked-coordinate variants share the same normalizer, the
full pseudo foreground |M|, so the visible-region variant is always <= the
inpainting variant for the same prediction pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import mat_invert, warp_image
from .coordmap import softmax
from .nn import tensor as T

MCV = "MCV"   # coordinate loss on the visible (non-occluded) foreground
MCI = "MCI"   # coordinate loss on the full foreground (inpainting)

# degenerate-sample counters (empty foreground regions)
COUNTERS = {"coord_ss_empty": 0, "syn_empty": 0}


def reset_counters():
    for k in COUNTERS:
        COUNTERS[k] = 0


@dataclass(frozen=True)
class LossWeights:
    tau: float = 1.0
    beta: float = 1.0
    gamma: float = 0.01
    coord_mode: str = MCI
    direction: str = "teacher_to_student"   # or "bidirectional"
    confidence_floor: float = 0.7

    def __post_init__(self):
        if min(self.tau, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.coord_mode not in (MCV, MCI):
            raise ValueError(f"unknown coord mode {self.coord_mode!r}")
        if self.direction not in ("teacher_to_student", "bidirectional"):
            raise ValueError(f"unknown direction {self.direction!r}")


@dataclass
class PseudoLabel:
    """Detached targets distilled from the non-augmented branch, already
    warped into the augmented branch's frame."""

    coord_labels: np.ndarray   # (h, w, 3) int, incl. background class
    seg_labels: np.ndarray     # (h, w) int in {0, 1}
    foreground: np.ndarray     # (h, w) bool, confidence-floored predicted mask
    confidence: np.ndarray     # (h, w) coordinate confidence in [0, 1]
    ignore: np.ndarray         # (h, w) bool, below the confidence floor


def _scores_array(scores) -> np.ndarray:
    return scores.data if isinstance(scores, T.Tensor) else np.asarray(scores)


def make_pseudo_labels(coord_scores, seg_scores, matrix_out: np.ndarray,
                       confidence_floor: float) -> PseudoLabel:
    """Harden teacher outputs to argmax labels and replay the pose-relevant
    similarity (already expressed at output-map scale) on them."""
    coord = _scores_array(coord_scores)
    seg = _scores_array(seg_scores)
    k = coord.shape[3]
    bg = k - 1
    cprob = softmax(coord, axis=3)
    clabels = cprob.argmax(axis=3)
    cconf = cprob.max(axis=3).prod(axis=2)
    sprob = softmax(seg, axis=2)
    slabels = sprob.argmax(axis=2)
    sconf = sprob.max(axis=2)

    h, w = slabels.shape
    clabels_w = warp_image(clabels, matrix_out, (h, w), mode="nearest", fill=bg)
    slabels_w = warp_image(slabels, matrix_out, (h, w), mode="nearest", fill=0)
    cconf_w = warp_image(cconf, matrix_out, (h, w), mode="nearest", fill=0.0)
    sconf_w = warp_image(sconf, matrix_out, (h, w), mode="nearest", fill=0.0)

    foreground = (slabels_w == 1) & (sconf_w >= confidence_floor)
    ignore = cconf_w < confidence_floor
    # labels reach the loss as discrete state; register them with the kink
    # detector so finite-difference probes that flip an argmax are skipped
    T.STATE_TRACE.note_bytes(clabels_w.astype(np.int64).tobytes())
    T.STATE_TRACE.note_bytes(slabels_w.astype(np.int64).tobytes())
    T.STATE_TRACE.note(foreground)
    T.STATE_TRACE.note(ignore)
    return PseudoLabel(coord_labels=clabels_w.astype(np.int64),
                       seg_labels=slabels_w.astype(np.int64),
                       foreground=foreground, confidence=cconf_w, ignore=ignore)


def _coord_ce_sum(coord_scores: T.Tensor, labels: np.ndarray,
                  region: np.ndarray) -> T.Tensor:
    """Sum over region pixels of the three per-axis cross-entropies."""
    logp = T.log_softmax(coord_scores, axis=3)
    picked = T.gather(logp, labels[:, :, :, None], axis=3)    # (h, w, 3, 1)
    weight = np.broadcast_to(region[:, :, None, None], picked.shape).astype(np.float64)
    return T.mul(T.tsum(T.mul(picked, weight)), -1.0)


def masked_coord_loss(student_coord: T.Tensor, pseudo: PseudoLabel,
                      occlusion: np.ndarray, mode: str = MCI) -> T.Tensor:
    """Self-supervised coordinate loss against detached pseudo labels.

    mode MCV counts only the visible foreground (pseudo foreground minus
    occluded pixels); mode MCI counts the full pseudo foreground. Both are
    normalized by |M| = full foreground size.
    """
    fg = pseudo.foreground
    n_fg = int(fg.sum())
    if n_fg == 0:
        COUNTERS["coord_ss_empty"] += 1
        return T.constant(0.0)
    region = fg & ~pseudo.ignore
    if mode == MCV:
        region = region & ~np.asarray(occlusion, dtype=bool)
    elif mode != MCI:
        raise ValueError(f"unknown coord mode {mode!r}")
    return T.mul(_coord_ce_sum(student_coord, pseudo.coord_labels, region), 1.0 / n_fg)


def seg_ss_loss(student_seg: T.Tensor, target_labels: np.ndarray) -> T.Tensor:
    """2-class cross-entropy against the warped, occlusion-adjusted teacher
    mask, averaged over all pixels."""
    h, w = target_labels.shape
    logp = T.log_softmax(student_seg, axis=2)
    picked = T.gather(logp, target_labels[:, :, None].astype(np.int64), axis=2)
    return T.mul(T.tsum(picked), -1.0 / (h * w))


def occlusion_adjusted_seg(pseudo: PseudoLabel, occlusion: np.ndarray) -> np.ndarray:
    """Relabel occluded pixels as background in the pseudo segmentation target."""
    return np.where(np.asarray(occlusion, dtype=bool), 0, pseudo.seg_labels)


def syn_loss(coord_scores: T.Tensor, seg_scores: T.Tensor, gt_labels: np.ndarray,
             gt_mask: np.ndarray, tau: float, seg_target: np.ndarray | None = None,
             occlusion: np.ndarray | None = None, coord_mode: str = MCI) -> T.Tensor:
    """Supervised synthetic loss: coordinate CE over the ground-truth
    foreground (normalized by its size) plus tau * segmentation CE (mean over
    all pixels).

    With occlusion given, coord_mode selects whether occluded foreground
    pixels still contribute coordinate supervision (MCI, the inpainting
    reading) or not (MCV). seg_target defaults to gt_mask.
    """
    mask = np.asarray(gt_mask, dtype=bool)
    n_fg = int(mask.sum())
    region = mask
    if occlusion is not None and coord_mode == MCV:
        region = mask & ~np.asarray(occlusion, dtype=bool)
    if seg_target is None:
        seg_target = mask.astype(np.int64)
    seg_term = seg_ss_loss(seg_scores, np.asarray(seg_target, dtype=np.int64))
    if n_fg == 0:
        COUNTERS["syn_empty"] += 1
        return T.mul(seg_term, tau)
    coord_term = T.mul(_coord_ce_sum(coord_scores, np.asarray(gt_labels, dtype=np.int64),
                                     region), 1.0 / n_fg)
    return T.add(coord_term, T.mul(seg_term, tau))


def hybrid_loss(l_syn, l_coord_ss, l_seg_ss, weights: LossWeights):
    """Weighted total: l_syn + beta * coordinate SS + gamma * segmentation SS.

    Works on graph tensors during training and on plain floats for logging.
    """
    if isinstance(l_syn, T.Tensor):
        return T.add(l_syn, T.add(T.mul(l_coord_ss, weights.beta),
                                  T.mul(l_seg_ss, weights.gamma)))
    return l_syn + weights.beta * l_coord_ss + weights.gamma * l_seg_ss


def mirrored_coord_loss(teacher_coord: T.Tensor, student_coord_scores,
                        student_seg_scores, matrix_out: np.ndarray,
                        occlusion: np.ndarray, confidence_floor: float) -> T.Tensor:
    """Bidirectional option: the augmented branch's detached predictions,
    warped back through the inverse similarity, supervise the clean branch on
    the visible region only."""
    inv = mat_invert(matrix_out)
    # hide occluded pixels before inverting so they cannot teach the clean branch
    masked_scores = _scores_array(student_coord_scores).copy()
    pseudo = make_pseudo_labels(masked_scores, _scores_array(student_seg_scores),
                                inv, confidence_floor)
    h, w = pseudo.seg_labels.shape
    occl_back = warp_image(np.asarray(occlusion, dtype=np.float64), inv, (h, w),
                           mode="nearest", fill=1.0) > 0.5
    visible = pseudo.foreground & ~occl_back
    n_fg = int(pseudo.foreground.sum())
    if n_fg == 0:
        COUNTERS["coord_ss_empty"] += 1
        return T.constant(0.0)
    region = visible & ~pseudo.ignore
    return T.mul(_coord_ce_sum(teacher_coord, pseudo.coord_labels, region), 1.0 / n_fg)


def output_probs(coord_scores, seg_scores):
    """Per-pixel probability maps stacked to (h, w, 3K + 2)."""
    coord = _scores_array(coord_scores)
    seg = _scores_array(seg_scores)
    h, w = seg.shape[:2]
    cp = softmax(coord, axis=3).reshape(h, w, -1)
    sp = softmax(seg, axis=2)
    return np.concatenate([cp, sp], axis=2)


def warp_probs(probs: np.ndarray, matrix_out: np.ndarray):
    """Bilinear warp of stacked probability maps; returns (warped, valid)."""
    h, w = probs.shape[:2]
    warped = warp_image(probs, matrix_out, (h, w), mode="bilinear", fill=0.0)
    valid = warp_image(np.ones((h, w)), matrix_out, (h, w), mode="nearest", fill=0.0) > 0.5
    return warped, valid


def consistency_score(probs_a: np.ndarray, probs_b: np.ndarray,
                      valid: np.ndarray | None = None) -> float:
    """Mean L1 distance between two stacked probability maps on the
    comparable region. Symmetric in its arguments; 0 for identical outputs."""
    a = np.asarray(probs_a, dtype=np.float64)
    b = np.asarray(probs_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    if valid is not None:
        v = np.asarray(valid, dtype=bool)
        if not v.any():
            return 0.0
        diff = diff[v]
    return float(diff.mean())
