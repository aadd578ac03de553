import numpy as np
import pytest

import sspose.augment as aug
from sspose.augment import (Block, Blur, Contrast, Lighting, Rotate, Scale,
                            Translate, Truncation, TransformRecord, AugmentError,
                            apply_pose_irrelevant, apply_pose_relevant,
                            mat_compose, mat_invert, sample_truncation_cut,
                            scale_record_to_output, similarity_about,
                            warp_output_map)


class ArrayPool:
    """Background pool stub over fixed images."""

    def __init__(self, images):
        self.images = [np.asarray(im, dtype=np.float64) for im in images]

    def random_crop(self, rng, h, w):
        img = self.images[int(rng.integers(len(self.images)))]
        y = int(rng.integers(0, img.shape[0] - h + 1))
        x = int(rng.integers(0, img.shape[1] - w + 1))
        return img[y:y + h, x:x + w]


class RiggedRng:
    """Deterministic stand-in driving truncation to a chosen cut."""

    def __init__(self, center, phi):
        self.center = center
        self.phi = phi
        self.calls = 0

    def normal(self, loc, scale):
        self.calls += 1
        return self.center[0] if self.calls % 2 == 1 else self.center[1]

    def uniform(self, a, b):
        return self.phi


@pytest.fixture
def rand_image():
    return np.random.default_rng(0).uniform(0, 1, (32, 32, 3))


def test_identity_similarity(rand_image):
    out, rec = apply_pose_relevant(rand_image, Rotate(0.0))
    assert np.allclose(out, rand_image)
    assert np.allclose(rec.similarity, aug.IDENTITY)


def test_rotate90_nearest_is_index_permutation(rand_image):
    out, _ = apply_pose_relevant(rand_image, Rotate(np.pi / 2), mode="nearest")
    # +90 deg in y-down pixel coords lands on np.rot90(k=3) exactly
    assert np.array_equal(out, np.rot90(rand_image, k=3, axes=(0, 1)))
    back, _ = apply_pose_relevant(out, Rotate(-np.pi / 2), mode="nearest")
    assert np.array_equal(back, rand_image)


def test_translate_composition_is_identity(rand_image):
    _, rec = apply_pose_relevant(rand_image, Translate(3, 0))
    _, rec = apply_pose_relevant(rand_image, Translate(-3, 0), record=rec)
    assert np.allclose(rec.similarity, aug.IDENTITY, atol=1e-12)


def test_mat_invert_roundtrip():
    m = similarity_about((4.0, 7.0), angle_rad=0.4, scale=1.3, translate=(2.0, -1.0))
    eye = mat_compose(m, mat_invert(m))
    assert np.allclose(eye, aug.IDENTITY, atol=1e-12)
    with pytest.raises(AugmentError):
        mat_invert(np.zeros((2, 3)))


def test_photometric_identities(rand_image):
    mask = np.zeros((32, 32), dtype=bool)
    rng = np.random.default_rng(0)
    out, occl = apply_pose_irrelevant(rand_image, mask, Blur(0.0), rng)
    assert np.array_equal(out, rand_image) and not occl.any()
    out, _ = apply_pose_irrelevant(rand_image, mask, Contrast(1.0), rng)
    assert np.allclose(out, rand_image)
    out, _ = apply_pose_irrelevant(rand_image, mask, Lighting((1, 1, 1), (0, 0, 0)), rng)
    assert np.allclose(out, rand_image)


def test_contrast_scales_around_mean(rand_image):
    rng = np.random.default_rng(0)
    out, _ = apply_pose_irrelevant(rand_image, np.zeros((32, 32), bool),
                                   Contrast(0.5), rng)
    m = rand_image.mean()
    assert np.allclose(out, m + 0.5 * (rand_image - m), atol=1e-12)


def test_block_single_rectangle_structure():
    img = np.ones((32, 32, 3))
    pool = ArrayPool([np.zeros((64, 64, 3))])
    rng = np.random.default_rng(11)
    out, occl = apply_pose_irrelevant(img, np.zeros((32, 32), bool),
                                      Block(count=1, size_range=(5, 9)), rng, pool)
    assert occl.any()
    ys, xs = np.nonzero(occl)
    h = ys.max() - ys.min() + 1
    w = xs.max() - xs.min() + 1
    assert occl.sum() == h * w          # exactly one clipped rectangle
    changed = np.any(out != img, axis=2)
    assert np.array_equal(changed, occl)


def test_block_two_rectangles_area(rand_image):
    pool = ArrayPool([np.full((64, 64, 3), -1.0)])   # distinguishable fill
    rng = np.random.default_rng(4)
    out, occl = apply_pose_irrelevant(rand_image, np.zeros((32, 32), bool),
                                      Block(count=2, size_range=(4, 8)), rng, pool)
    changed = np.any(out != rand_image, axis=2)
    assert np.array_equal(changed, occl)
    assert occl.sum() == changed.sum()


def test_block_requires_pool(rand_image):
    with pytest.raises(AugmentError):
        apply_pose_irrelevant(rand_image, np.zeros((32, 32), bool), Block(),
                              np.random.default_rng(0), None)


def test_truncation_guard_saturates_to_fallback():
    mask = np.zeros((32, 32), dtype=bool)
    mask[8:24, 8:24] = True
    fallbacks = 0
    for seed in range(20):
        _, fell_back = sample_truncation_cut(mask, np.random.default_rng(seed),
                                             min_visible=0.999)
        fallbacks += fell_back
    assert fallbacks >= 18


def test_truncation_visible_fraction_guard():
    mask = np.zeros((48, 48), dtype=bool)
    mask[10:40, 14:34] = True
    area = mask.sum()
    for seed in range(100):
        cut, fell_back = sample_truncation_cut(mask, np.random.default_rng(seed),
                                               min_visible=0.2)
        if not fell_back:
            visible = (mask & ~cut).sum() / area
            assert visible >= 0.2


def test_truncation_axis_aligned_cut():
    mask = np.zeros((16, 16), dtype=bool)
    mask[4:12, 4:12] = True
    c_x = (4 + 12) / 2.0
    cut, fell_back = sample_truncation_cut(mask, RiggedRng((c_x, 8.0), 0.0),
                                           min_visible=0.2)
    assert not fell_back
    gx = np.arange(16) + 0.5
    expected = np.broadcast_to(gx > c_x, (16, 16))
    assert np.array_equal(cut, expected)


def test_truncation_empty_mask_raises():
    with pytest.raises(AugmentError):
        sample_truncation_cut(np.zeros((8, 8), bool), np.random.default_rng(0))


def test_warp_output_map_identity_and_shift():
    labels = np.random.default_rng(3).integers(0, 65, size=(16, 16))
    out = warp_output_map(labels, aug.IDENTITY, kind="label", background_label=64)
    assert np.array_equal(out, labels)

    m = similarity_about((8.0, 8.0), translate=(2.0, 0.0))
    out = warp_output_map(labels, m, kind="label", background_label=64)
    assert np.array_equal(out[:, 2:], labels[:, :-2])
    assert np.all(out[:, :2] == 64)


def test_warp_output_map_scaled_record():
    rec = TransformRecord()
    img = np.zeros((64, 64, 3))
    _, rec = apply_pose_relevant(img, Translate(8.0, 0.0), record=rec)
    m_out = scale_record_to_output(rec, 16 / 64)
    labels = np.random.default_rng(8).integers(0, 65, size=(16, 16))
    out = warp_output_map(labels, m_out, kind="label", background_label=64)
    assert np.array_equal(out[:, 2:], labels[:, :-2])   # 8 px at 1/4 scale = 2 cells


def test_warp_real_map_bilinear_fill():
    real = np.random.default_rng(5).uniform(0, 1, (8, 8))
    m = similarity_about((4.0, 4.0), translate=(3.0, 0.0))
    out = warp_output_map(real, m, kind="real")
    assert np.allclose(out[:, 3:], real[:, :-3], atol=1e-12)
    assert np.all(out[:, :3] == 0.0)


def test_taxonomy_no_type_two_op():
    # pose-relevant ops transform output maps consistently (type I); the
    # pose-irrelevant set splits into photometric (III) and occluding (IV).
    assert {Rotate, Translate, Scale}.isdisjoint({Blur, Contrast, Lighting,
                                                  Block, Truncation})
    import inspect
    sig = inspect.signature(apply_pose_irrelevant)
    assert "pose" not in sig.parameters   # ops cannot touch pose annotations
