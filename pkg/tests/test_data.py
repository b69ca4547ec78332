"""Synthetic toys, image I/O, occlusion and augmentation."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cooplearn.data import (CondDataset, DataError, MaskSpec, ToyOracle, ToySpec, augment,
                            denormalize_u8, generate_toy, glyph_inpainting_dataset,
                            load_paired_images, mirror, normalize_u8, occlude, read_image_u8,
                            resize, save_paired_images, write_image_u8)


def test_single_pair_reproducible():
    a, _ = generate_toy(ToySpec(seed=7), 1)
    b, _ = generate_toy(ToySpec(seed=7), 1)
    assert np.array_equal(a.Y, b.Y) and np.array_equal(a.C, b.C)
    assert len(a) == 1


def test_equal_seeds_equal_datasets():
    for family in ("gaussian_mixture", "ring", "glyphs"):
        spec = ToySpec(family=family, seed=3)
        a, _ = generate_toy(spec, 20)
        b, _ = generate_toy(spec, 20)
        assert np.array_equal(a.Y, b.Y) and np.array_equal(a.labels, b.labels)


def test_mixture_class_means_within_three_standard_errors():
    spec = ToySpec(n_classes=3, dim=2, seed=11)
    ds, _ = generate_toy(spec, 10_000)
    means, stds = np.asarray(spec.means), np.asarray(spec.stds)
    for k in range(3):
        pts = ds.Y[ds.labels == k].astype(np.float64)
        se = stds[k] / math.sqrt(len(pts))
        assert np.all(np.abs(pts.mean(axis=0) - means[k]) < 3 * se)
    assert np.array_equal(ds.C.argmax(axis=1), ds.labels)


def test_labels_uniform():
    ds, _ = generate_toy(ToySpec(n_classes=4, seed=2), 8000)
    counts = np.bincount(ds.labels, minlength=4)
    assert stats.chisquare(counts).pvalue > 0.01


def test_oracle_density_at_class_mean():
    spec = ToySpec(n_classes=3, dim=2, stds=[0.1, 0.2, 0.3])
    oracle = ToyOracle(spec)
    mu = np.asarray(spec.means)
    for k in range(3):
        expected = -math.log(2 * math.pi * spec.stds[k] ** 2)
        assert oracle.log_density(mu[k:k + 1], [k])[0] == pytest.approx(expected, abs=1e-12)
    # marginal: equal-weight mixture summed term by term
    y = mu[:1]
    terms = [math.exp(-((y[0] - mu[j]) ** 2).sum() / (2 * spec.stds[j] ** 2))
             / (2 * math.pi * spec.stds[j] ** 2) for j in range(3)]
    assert oracle.log_marginal(y)[0] == pytest.approx(math.log(sum(terms) / 3), abs=1e-12)


def test_ring_density_integrates_to_one():
    spec = ToySpec(family="ring", n_classes=2)
    oracle = ToyOracle(spec)
    g = np.linspace(-1.3, 1.3, 521)
    xx, yy = np.meshgrid(g, g)
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    h = g[1] - g[0]
    for k in range(2):
        mass = np.exp(oracle.log_density(pts, np.full(len(pts), k))).sum() * h * h
        assert mass == pytest.approx(1.0, abs=1e-3)


def test_glyph_values_in_range_and_no_density():
    ds, oracle = generate_toy(ToySpec(family="glyphs", n_classes=4, image_size=16), 8)
    assert ds.Y.shape == (8, 1, 16, 16)
    assert ds.Y.min() >= -1 and ds.Y.max() <= 1
    with pytest.raises(DataError):
        oracle.log_density(ds.Y, ds.labels)


@pytest.mark.parametrize("kw", [dict(family="spiral"), dict(n_classes=0),
                                dict(means=[[0, 0]], n_classes=2), dict(stds=[0.1, -1, 0.1]),
                                dict(family="ring", dim=3), dict(family="glyphs", n_classes=5),
                                dict(family="glyphs", image_size=12)])
def test_invalid_spec(kw):
    with pytest.raises(DataError):
        ToySpec(**kw)


def test_generate_needs_positive_n():
    with pytest.raises(DataError):
        generate_toy(ToySpec(), 0)


def test_dataset_alignment_error():
    with pytest.raises(DataError):
        CondDataset(np.zeros((2, 3)), np.zeros((3, 3)), "onehot")


# -- image files -------------------------------------------------------------

@pytest.mark.parametrize("ext", [".png", ".pgm"])
def test_paired_round_trip_bit_exact(tmp_path, rng, ext):
    u8 = rng.integers(0, 256, (2, 1, 6, 5)).astype(np.uint8)
    ds = CondDataset(normalize_u8(u8), normalize_u8(u8[::-1]), "image")
    save_paired_images(ds, tmp_path / "c", tmp_path / "t", tmp_path / "m.txt", ext=ext)
    back = load_paired_images(tmp_path / "c", tmp_path / "t", tmp_path / "m.txt")
    assert np.array_equal(denormalize_u8(back.Y), u8)
    assert np.array_equal(denormalize_u8(back.C), u8[::-1])
    assert back.Y.min() >= -1 and back.Y.max() <= 1
    assert back.normalization["kind"] == "u8_to_unit"


def test_rgb_round_trip(tmp_path, rng):
    u8 = rng.integers(0, 256, (3, 4, 7)).astype(np.uint8)
    write_image_u8(tmp_path / "x.png", u8)
    assert np.array_equal(read_image_u8(tmp_path / "x.png"), u8)


def test_normalization_round_trip_exact():
    u8 = np.arange(256, dtype=np.uint8)
    assert np.array_equal(denormalize_u8(normalize_u8(u8)), u8)


def test_empty_manifest(tmp_path):
    (tmp_path / "m.txt").write_text("# nothing\n\n")
    ds = load_paired_images(tmp_path, tmp_path, tmp_path / "m.txt")
    assert len(ds) == 0


def test_mismatched_pair_named(tmp_path):
    write_image_u8(tmp_path / "a.png", np.zeros((1, 4, 4), np.uint8))
    write_image_u8(tmp_path / "b.png", np.zeros((1, 5, 4), np.uint8))
    (tmp_path / "m.txt").write_text("a.png b.png\n")
    with pytest.raises(DataError, match="a.png, b.png"):
        load_paired_images(tmp_path, tmp_path, tmp_path / "m.txt")


def test_missing_and_undecodable(tmp_path):
    (tmp_path / "m.txt").write_text("a.png a.png\n")
    with pytest.raises(FileNotFoundError):
        load_paired_images(tmp_path, tmp_path, tmp_path / "m.txt")
    (tmp_path / "a.png").write_bytes(b"not an image")
    with pytest.raises(DataError):
        load_paired_images(tmp_path, tmp_path, tmp_path / "m.txt")
    (tmp_path / "m.txt").write_text("a.png\n")
    with pytest.raises(DataError):
        load_paired_images(tmp_path, tmp_path, tmp_path / "m.txt")


# -- occlusion ----------------------------------------------------------------

def test_full_mask():
    Y = np.ones((2, 1, 4, 4))
    C, mask = occlude(Y, MaskSpec(0, 0, 4, 4))
    assert (C == 0).all() and (mask == 1).all()


def test_central_geometry():
    assert MaskSpec.central(256, 128) == MaskSpec(64, 64, 128, 128)
    assert MaskSpec.central(32, 16) == MaskSpec(8, 8, 16, 16)


def test_outside_mask_bit_exact(rng):
    Y = rng.standard_normal((3, 2, 32, 32)).astype(np.float32)
    C, mask = occlude(Y, MaskSpec.central(32, 16))
    assert np.array_equal(C[mask == 0], Y[mask == 0])
    assert (C[mask == 1] == 0).all()
    assert mask.sum() == 3 * 2 * 16 * 16


def test_mask_out_of_bounds():
    with pytest.raises(DataError):
        occlude(np.zeros((1, 8, 8)), MaskSpec(4, 4, 5, 2))


def test_glyph_inpainting_dataset():
    ds, mask = glyph_inpainting_dataset(5, size=32, hole=16)
    assert ds.Y.shape == ds.C.shape == (5, 1, 32, 32)
    assert mask.shape == (1, 32, 32) and mask.sum() == 256
    assert np.array_equal(ds.C[:, mask == 0], ds.Y[:, mask == 0])


# -- augmentation ----------------------------------------------------------------

def test_mirror_involution(rng):
    img = rng.standard_normal((2, 5, 6))
    assert np.array_equal(mirror(mirror(img)), img)
    a, _ = augment((img, img), rng, jitter_factor=1.0, force_flip=True)
    b, _ = augment((a, a), rng, jitter_factor=1.0, force_flip=True)
    assert np.array_equal(b, img)


def test_jitter_constant_image(rng):
    Y = np.full((1, 16, 16), 0.25)
    for _ in range(10):
        y, c = augment((Y, Y), rng)
        assert np.array_equal(y, Y) and np.array_equal(c, Y)


def coordinate_image(n):
    rows, cols = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float), indexing="ij")
    return np.stack([rows, cols])


def test_same_transform_for_target_and_condition(rng):
    img = coordinate_image(16)
    for _ in range(20):
        y, c = augment((img, img), rng, condition_method="nearest", target_method="nearest")
        assert np.array_equal(y, c)
    # bilinear target agrees with the nearest condition to within one source pixel
    for _ in range(20):
        y, c = augment((img, img), rng)
        assert np.max(np.abs(y - c)) <= 1.0


def test_crop_offsets_uniform():
    # with nearest resizing 32 -> 36 the top-left source coordinate identifies the offset
    r = np.random.default_rng(5)
    img = coordinate_image(32)
    tops, lefts = [], []
    for _ in range(10_000):
        y, _ = augment((img, img), r, mirror=False, target_method="nearest")
        tops.append(int(y[0, 0, 0]))
        lefts.append(int(y[1, 0, 0]))
    for offs in (tops, lefts):
        counts = np.bincount(offs, minlength=5)
        assert len(counts) == 5
        assert stats.chisquare(counts).pvalue > 0.01


def test_augment_size_mismatch():
    with pytest.raises(DataError):
        augment((np.zeros((1, 8, 8)), np.zeros((1, 9, 8))), np.random.default_rng(0))


def test_resize_identity_and_errors(rng):
    img = rng.standard_normal((1, 5, 7))
    assert np.allclose(resize(img, 5, 7), img)
    assert np.array_equal(resize(img, 5, 7, "nearest"), img)
    with pytest.raises(DataError):
        resize(img, 3, 3, "cubic")


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_augment_preserves_shape_and_range(seed):
    r = np.random.default_rng(seed)
    Y = r.uniform(-1, 1, (3, 12, 12))
    C = r.uniform(-1, 1, (1, 12, 12))
    y, c = augment((Y, C), r)
    assert y.shape == Y.shape and c.shape == C.shape
    assert y.min() >= Y.min() - 1e-12 and y.max() <= Y.max() + 1e-12
