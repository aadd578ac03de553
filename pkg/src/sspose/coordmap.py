"""Bin-classification encoding of normalized object coordinates and the
2D-3D correspondence extraction feeding PnP.

K = 65 classes per axis: bins 0..63 discretize [0, 1], class 64 is
background. Bin centers sit at (b + 0.5) / 64 so the encode/decode round
trip is bounded by half a bin width.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_K = 65


class CoordMapError(ValueError):
    pass


@dataclass
class DecodedMaps:
    nocs: np.ndarray         # (h, w, 3) bin-center coordinates, 0 where invalid
    valid: np.ndarray        # (h, w) bool, all three axes foreground
    confidence: np.ndarray   # (h, w) in [0, 1]


@dataclass
class CorrespondenceSet:
    uv: np.ndarray           # (n, 2) full-frame pixel positions
    xyz: np.ndarray          # (n, 3) model-frame points, meters
    confidence: np.ndarray   # (n,)

    def __len__(self):
        return len(self.uv)


def encode_bins(nocs: np.ndarray, mask: np.ndarray, K: int = DEFAULT_K) -> np.ndarray:
    """Quantize a [0,1] coordinate map to per-axis bin labels.

    Background pixels get label K-1 on all three axes.
    """
    n_bins = K - 1
    nocs = np.asarray(nocs, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    fg = nocs[mask]
    if fg.size and (fg.min() < 0.0 or fg.max() > 1.0):
        raise CoordMapError("nocs values outside [0, 1] on the foreground")
    labels = np.full(nocs.shape, n_bins, dtype=np.int64)
    labels[mask] = np.minimum((fg * n_bins).astype(np.int64), n_bins - 1)
    return labels


def softmax(scores: np.ndarray, axis: int = -1) -> np.ndarray:
    m = scores.max(axis=axis, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(axis=axis, keepdims=True)


def decode_bins(labels_or_scores: np.ndarray, K: int = DEFAULT_K) -> DecodedMaps:
    """Invert the bin encoding.

    Accepts either an (h, w, 3) integer label map or an (h, w, 3, K) score
    map. A pixel is valid iff no axis decodes to background; confidence is
    the product of per-axis softmax maxima (1 for label input).
    """
    n_bins = K - 1
    arr = np.asarray(labels_or_scores)
    if arr.ndim == 3:
        labels = arr.astype(np.int64)
        conf = np.ones(arr.shape[:2])
    elif arr.ndim == 4:
        if arr.shape[3] != K:
            raise CoordMapError(f"score map has {arr.shape[3]} classes, expected {K}")
        probs = softmax(arr.astype(np.float64), axis=3)
        labels = probs.argmax(axis=3)
        conf = probs.max(axis=3).prod(axis=2)
    else:
        raise CoordMapError(f"expected rank 3 or 4 input, got rank {arr.ndim}")
    valid = np.all(labels < n_bins, axis=2)
    nocs = np.zeros(labels.shape, dtype=np.float64)
    nocs[valid] = (labels[valid] + 0.5) / n_bins
    return DecodedMaps(nocs=nocs, valid=valid, confidence=conf)


def extract_correspondences(decoded: DecodedMaps, seg_mask: np.ndarray, bbox,
                            extent_min: np.ndarray, extent_max: np.ndarray,
                            min_confidence: float = 0.0) -> CorrespondenceSet:
    """Build 2D-3D correspondences from decoded maps produced on a crop.

    bbox (x0, y0, x1, y1) is the full-frame crop the maps were computed on;
    output pixel (i, j) maps back to frame position
    (x0 + (j+0.5)/w * bbox_w, y0 + (i+0.5)/h * bbox_h). An empty result is
    legal; the caller decides how to handle it.
    """
    h, w = decoded.valid.shape
    keep = decoded.valid & np.asarray(seg_mask, dtype=bool) \
        & (decoded.confidence >= min_confidence)
    iy, ix = np.nonzero(keep)
    x0, y0, x1, y1 = [float(v) for v in bbox]
    u = x0 + (ix + 0.5) / w * (x1 - x0)
    v = y0 + (iy + 0.5) / h * (y1 - y0)
    lo = np.asarray(extent_min, dtype=np.float64)
    hi = np.asarray(extent_max, dtype=np.float64)
    xyz = lo + decoded.nocs[iy, ix] * (hi - lo)
    return CorrespondenceSet(uv=np.stack([u, v], axis=1), xyz=xyz,
                             confidence=decoded.confidence[iy, ix])
