"""Domain randomization: pose-relevant 2D similarities, pose-irrelevant
photometric/occlusion ops, the truncation cut, and replay of the recorded
similarity on output-resolution maps.

Op taxonomy honored here: Blur/Contrast/Lighting preserve pose and output
maps; Block/Truncation preserve pose but occlude parts of the output;
Rotate/Translate/Scale transform pose and output consistently. No op that
changes the pose while leaving the output unchanged is provided.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter


class AugmentError(ValueError):
    pass


# ---------------------------------------------------------------------------
# affine warp machinery (positions are continuous coords, pixel centers at
# integer + 0.5; matrices are 2x3, mapping input positions to output positions)

IDENTITY = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def mat_compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a after b as position maps: x -> a(b(x))."""
    out = np.empty((2, 3))
    out[:, :2] = a[:, :2] @ b[:, :2]
    out[:, 2] = a[:, :2] @ b[:, 2] + a[:, 2]
    return out


def mat_invert(m: np.ndarray) -> np.ndarray:
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if abs(det) < 1e-12:
        raise AugmentError("similarity matrix is not invertible")
    inv = np.empty((2, 3))
    inv[0, 0] = m[1, 1] / det
    inv[0, 1] = -m[0, 1] / det
    inv[1, 0] = -m[1, 0] / det
    inv[1, 1] = m[0, 0] / det
    inv[:, 2] = -inv[:, :2] @ m[:, 2]
    return inv


def similarity_about(center_xy, angle_rad=0.0, scale=1.0, translate=(0.0, 0.0)) -> np.ndarray:
    """Rotation+scale about a center point followed by a translation."""
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    lin = scale * np.array([[c, -s], [s, c]])
    cx, cy = center_xy
    m = np.empty((2, 3))
    m[:, :2] = lin
    m[:, 2] = np.array([cx + translate[0], cy + translate[1]]) - lin @ np.array([cx, cy])
    return m


def warp_image(image: np.ndarray, matrix: np.ndarray, out_hw: tuple[int, int],
               mode: str = "bilinear", fill=0.0) -> np.ndarray:
    """Warp by a forward 2x3 matrix; samples the inverse map at output pixel
    centers. mode 'bilinear' for real-valued maps, 'nearest' for labels.
    Out-of-frame samples get `fill`.
    """
    inv = mat_invert(matrix)
    out_h, out_w = out_hw
    gx, gy = np.meshgrid(np.arange(out_w) + 0.5, np.arange(out_h) + 0.5)
    sx = inv[0, 0] * gx + inv[0, 1] * gy + inv[0, 2]
    sy = inv[1, 0] * gx + inv[1, 1] * gy + inv[1, 2]
    return sample_at(image, sx, sy, mode=mode, fill=fill)


def sample_at(image: np.ndarray, sx: np.ndarray, sy: np.ndarray,
              mode: str = "bilinear", fill=0.0) -> np.ndarray:
    """Sample an image at continuous positions (sx, sy)."""
    h, w = image.shape[:2]
    valid = (sx >= 0) & (sx <= w) & (sy >= 0) & (sy <= h)
    flat_shape = sx.shape + image.shape[2:]
    if mode == "nearest":
        ix = np.clip(np.floor(sx).astype(np.int64), 0, w - 1)
        iy = np.clip(np.floor(sy).astype(np.int64), 0, h - 1)
        out = image[iy, ix].astype(image.dtype, copy=True)
    elif mode == "bilinear":
        x = sx - 0.5
        y = sy - 0.5
        x0 = np.floor(x).astype(np.int64)
        y0 = np.floor(y).astype(np.int64)
        wx = x - x0
        wy = y - y0
        x0c = np.clip(x0, 0, w - 1)
        x1c = np.clip(x0 + 1, 0, w - 1)
        y0c = np.clip(y0, 0, h - 1)
        y1c = np.clip(y0 + 1, 0, h - 1)
        if image.ndim == 3:
            wx = wx[..., None]
            wy = wy[..., None]
        out = (image[y0c, x0c] * (1 - wx) * (1 - wy) + image[y0c, x1c] * wx * (1 - wy)
               + image[y1c, x0c] * (1 - wx) * wy + image[y1c, x1c] * wx * wy)
    else:
        raise AugmentError(f"unknown sampling mode {mode!r}")
    out = np.asarray(out, dtype=np.float64 if mode == "bilinear" else image.dtype)
    out = out.reshape(flat_shape)
    if image.ndim == 3:
        out[~valid] = fill
    else:
        out = np.where(valid, out, np.asarray(fill, dtype=out.dtype))
    return out


def crop_resize(image: np.ndarray, bbox, out_hw: tuple[int, int],
                mode: str = "bilinear", fill=0.0) -> np.ndarray:
    """Resample the bbox region (x0, y0, x1, y1) to out_hw."""
    x0, y0, x1, y1 = [float(v) for v in bbox]
    out_h, out_w = out_hw
    gx, gy = np.meshgrid(np.arange(out_w) + 0.5, np.arange(out_h) + 0.5)
    sx = x0 + gx * (x1 - x0) / out_w
    sy = y0 + gy * (y1 - y0) / out_h
    return sample_at(image, sx, sy, mode=mode, fill=fill)


# ---------------------------------------------------------------------------
# op types

@dataclass(frozen=True)
class Rotate:
    angle_rad: float


@dataclass(frozen=True)
class Translate:
    dx: float
    dy: float


@dataclass(frozen=True)
class Scale:
    factor: float

    def __post_init__(self):
        if self.factor <= 0:
            raise AugmentError("scale factor must be positive")


@dataclass(frozen=True)
class Blur:
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise AugmentError("blur sigma must be >= 0")


@dataclass(frozen=True)
class Contrast:
    factor: float

    def __post_init__(self):
        if self.factor <= 0:
            raise AugmentError("contrast factor must be positive")


@dataclass(frozen=True)
class Lighting:
    gain: tuple = (1.0, 1.0, 1.0)   # per channel
    bias: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Block:
    count: int = 2
    size_range: tuple = (4, 16)     # rectangle side lengths, px


@dataclass(frozen=True)
class Truncation:
    center_spread: float = 0.25     # sigma as a fraction of the mask bbox size
    min_visible: float = 0.2

    def __post_init__(self):
        if not (0 < self.min_visible < 1):
            raise AugmentError("min_visible must be in (0, 1)")


@dataclass
class TransformRecord:
    """What was done to one sample: the exact 2D similarity from all
    pose-relevant ops (at input-crop scale) and the pixels hidden by
    occlusion ops. Enough to replay the similarity on output maps.
    """

    similarity: np.ndarray = field(default_factory=lambda: IDENTITY.copy())
    occlusion_mask: np.ndarray | None = None
    ops: list = field(default_factory=list)

    def ensure_occlusion(self, shape):
        if self.occlusion_mask is None:
            self.occlusion_mask = np.zeros(shape, dtype=bool)
        return self.occlusion_mask


# ---------------------------------------------------------------------------
# pose-relevant ops

def apply_pose_relevant(image: np.ndarray, op, rng=None, mode: str = "bilinear",
                        record: TransformRecord | None = None):
    """Apply one 2D similarity op; returns (image', record). Rotation and
    scale act about the image center. Pass an existing record to compose.
    """
    h, w = image.shape[:2]
    center = (w / 2.0, h / 2.0)
    if isinstance(op, Rotate):
        m = similarity_about(center, angle_rad=op.angle_rad)
    elif isinstance(op, Translate):
        m = similarity_about(center, translate=(op.dx, op.dy))
    elif isinstance(op, Scale):
        m = similarity_about(center, scale=op.factor)
    else:
        raise AugmentError(f"not a pose-relevant op: {op!r}")
    if record is None:
        record = TransformRecord()
    record.similarity = mat_compose(m, record.similarity)
    record.ops.append(op)
    out = warp_image(image, m, (h, w), mode=mode, fill=0.0)
    return out, record


# ---------------------------------------------------------------------------
# pose-irrelevant ops

def apply_pose_irrelevant(image: np.ndarray, mask: np.ndarray, op, rng,
                          background_pool=None):
    """Apply one pose-irrelevant op; returns (image', occlusion_delta).

    `mask` is the object foreground aligned with `image` (used by Truncation
    for the cut-center distribution and the visibility guard). Block and
    Truncation need a background pool to fill removed areas.
    """
    h, w = image.shape[:2]
    if isinstance(op, Blur):
        if op.sigma == 0:
            return image.copy(), np.zeros((h, w), dtype=bool)
        out = np.stack([gaussian_filter(image[:, :, c], op.sigma) for c in range(3)], axis=2)
        return np.clip(out, 0.0, 1.0), np.zeros((h, w), dtype=bool)
    if isinstance(op, Contrast):
        mean = image.mean()
        out = mean + op.factor * (image - mean)
        return np.clip(out, 0.0, 1.0), np.zeros((h, w), dtype=bool)
    if isinstance(op, Lighting):
        gain = np.asarray(op.gain, dtype=np.float64)
        bias = np.asarray(op.bias, dtype=np.float64)
        out = np.clip(image * gain + bias, 0.0, 1.0)
        return out, np.zeros((h, w), dtype=bool)
    if isinstance(op, Block):
        if background_pool is None:
            raise AugmentError("Block requires a background pool")
        out = image.copy()
        occl = np.zeros((h, w), dtype=bool)
        for _ in range(op.count):
            bw = int(rng.integers(op.size_range[0], op.size_range[1] + 1))
            bh = int(rng.integers(op.size_range[0], op.size_range[1] + 1))
            x0 = int(rng.integers(-bw + 1, w))
            y0 = int(rng.integers(-bh + 1, h))
            x1, y1 = min(x0 + bw, w), min(y0 + bh, h)
            x0, y0 = max(x0, 0), max(y0, 0)
            if x1 <= x0 or y1 <= y0:
                continue
            fill = background_pool.random_crop(rng, y1 - y0, x1 - x0)
            out[y0:y1, x0:x1] = fill
            occl[y0:y1, x0:x1] = True
        return out, occl
    if isinstance(op, Truncation):
        if background_pool is None:
            raise AugmentError("Truncation requires a background pool")
        cut, fell_back = sample_truncation_cut(mask, rng, op.center_spread, op.min_visible)
        if fell_back:
            return apply_pose_irrelevant(image, mask, Block(), rng, background_pool)
        out = image.copy()
        fill = background_pool.random_crop(rng, h, w)
        out[cut] = fill[cut]
        return out, cut
    raise AugmentError(f"not a pose-irrelevant op: {op!r}")


def sample_truncation_cut(object_mask: np.ndarray, rng,
                          center_spread: float = 0.25, min_visible: float = 0.2,
                          max_tries: int = 10):
    """Sample a half-plane cut over the frame.

    Center from a Gaussian at the mask bbox center (per-axis sigma =
    center_spread * bbox size), truncated to the bbox; direction uniform.
    Pixels on the positive side of the line (pixel centers, normal
    (cos phi, sin phi)) are removed. Resamples until the visible object
    fraction stays >= min_visible; returns (cut_mask, fell_back) where
    fell_back=True means the caller should use Block instead.
    """
    mask = np.asarray(object_mask, dtype=bool)
    if not mask.any():
        raise AugmentError("truncation needs a non-empty object mask")
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    bx0, bx1 = xs.min(), xs.max() + 1
    by0, by1 = ys.min(), ys.max() + 1
    bcx, bcy = (bx0 + bx1) / 2.0, (by0 + by1) / 2.0
    sx = center_spread * (bx1 - bx0)
    sy = center_spread * (by1 - by0)
    area = mask.sum()
    gx, gy = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    for _ in range(max_tries):
        for _ in range(64):  # truncate the Gaussian to the bbox by rejection
            cx = rng.normal(bcx, sx)
            cy = rng.normal(bcy, sy)
            if bx0 <= cx <= bx1 and by0 <= cy <= by1:
                break
        else:
            cx, cy = bcx, bcy
        phi = rng.uniform(0.0, 2 * np.pi)
        cut = (gx - cx) * np.cos(phi) + (gy - cy) * np.sin(phi) > 0
        visible = (mask & ~cut).sum() / area
        if visible >= min_visible:
            return cut, False
    return np.zeros((h, w), dtype=bool), True


def scale_record_to_output(record: TransformRecord, ratio: float) -> np.ndarray:
    """Express the recorded similarity at output-map scale (out/in ratio)."""
    m = record.similarity.copy()
    m[:, 2] *= ratio
    return m


def warp_output_map(map_arr: np.ndarray, matrix: np.ndarray, kind: str,
                    background_label: int | None = None) -> np.ndarray:
    """Replay a pose-relevant similarity on an output-resolution map.

    kind='label': nearest-neighbor, out-of-frame pixels get background_label.
    kind='real': bilinear, out-of-frame pixels get 0.
    The matrix must already be expressed at the map's scale
    (see scale_record_to_output).
    """
    h, w = map_arr.shape[:2]
    if kind == "label":
        if background_label is None:
            raise AugmentError("label warp needs a background_label fill")
        return warp_image(map_arr, matrix, (h, w), mode="nearest", fill=background_label)
    if kind == "real":
        return warp_image(map_arr, matrix, (h, w), mode="bilinear", fill=0.0)
    raise AugmentError(f"unknown map kind {kind!r}")
