import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hairmatte.data import (
    Dataset,
    DatasetError,
    ImageFormatError,
    Sample,
    SynthConfig,
    TruncatedImageError,
    decode_netpbm,
    encode_netpbm,
    flip_augment,
    generate_synthetic,
    load_dataset,
    load_image,
    load_mask,
    resize_bilinear,
    save_image,
    save_mask,
    validate_sample,
    write_dataset,
)
from hairmatte.metrics import confusion, iou


# -- image I/O ---------------------------------------------------------------
@pytest.mark.parametrize("channels,ext", [(3, ".ppm"), (1, ".pgm"), (3, ".png"), (1, ".png")])
def test_round_trip_bit_exact(tmp_path, channels, ext):
    rng = np.random.default_rng(channels)
    img = rng.integers(0, 256, (channels, 5, 7)).astype(np.float32) / 255
    path = tmp_path / f"x{ext}"
    save_image(path, img)
    np.testing.assert_array_equal(load_image(path), img)


def test_known_bytes():
    raw = b"P5\n2 2\n255\n" + bytes([0, 51, 204, 255])
    np.testing.assert_array_equal(decode_netpbm(raw)[0], np.array([[0, 51], [204, 255]], np.float32) / 255)


def test_header_comments_allowed():
    raw = b"P5\n# made by hand\n2 1\n255\n" + bytes([10, 20])
    assert decode_netpbm(raw).shape == (1, 1, 2)


def test_encode_layout():
    assert encode_netpbm(np.ones((1, 1, 2))) == b"P5\n2 1\n255\n\xff\xff"


def test_truncated_pixels():
    with pytest.raises(TruncatedImageError):
        decode_netpbm(b"P6\n2 2\n255\n" + bytes(5))


def test_truncated_header():
    with pytest.raises(TruncatedImageError):
        decode_netpbm(b"P6\n2")


def test_unsupported_magic(tmp_path):
    (tmp_path / "x.bmp").write_bytes(b"BM\x00\x00")
    with pytest.raises(ImageFormatError, match="magic") as err:
        load_image(tmp_path / "x.bmp")
    assert not isinstance(err.value, TruncatedImageError)


def test_sixteen_bit_rejected():
    with pytest.raises(ImageFormatError):
        decode_netpbm(b"P5\n1 1\n65535\n\x00\x00")


def test_mask_round_trip_binary(tmp_path):
    labels = (np.random.default_rng(0).uniform(size=(1, 6, 6)) > 0.5).astype(np.float32)
    save_mask(tmp_path / "m.pgm", labels)
    np.testing.assert_array_equal(load_image(tmp_path / "m.pgm") >= 0.5, labels == 1)
    np.testing.assert_array_equal(load_mask(tmp_path / "m.pgm"), labels)


def test_three_class_mask_round_trip(tmp_path):
    labels = np.random.default_rng(1).integers(0, 3, (1, 4, 4)).astype(np.float32)
    save_mask(tmp_path / "m.pgm", labels, num_classes=3)
    np.testing.assert_array_equal(load_mask(tmp_path / "m.pgm", num_classes=3), labels)


# -- resize ------------------------------------------------------------------
def test_resize_identity_is_bit_identical():
    img = np.random.default_rng(0).uniform(size=(3, 9, 11)).astype(np.float32)
    np.testing.assert_array_equal(resize_bilinear(img, (9, 11)), img)


def test_resize_upsample_row_monotone():
    out = resize_bilinear(np.array([[[0.0, 1.0]]]), (1, 4))[0, 0]
    assert out[0] == 0.0 and out[-1] == 1.0
    assert np.all(np.diff(out) > 0)
    np.testing.assert_allclose(out, [0, 0.25, 0.75, 1.0])


@settings(max_examples=25, deadline=None)
@given(c=st.floats(0, 1), h=st.integers(2, 40), w=st.integers(2, 40), t=st.integers(1, 40))
def test_resize_constant_stays_constant(c, h, w, t):
    img = np.full((1, h, w), c)
    back = resize_bilinear(resize_bilinear(img, t), (h, w))
    np.testing.assert_allclose(back, c, atol=1e-12)


def test_resize_rejects_zero_target():
    with pytest.raises(ValueError):
        resize_bilinear(np.zeros((1, 4, 4)), 0)


# -- flip --------------------------------------------------------------------
def _asym_dataset(n=3):
    rng = np.random.default_rng(0)
    samples = []
    for i in range(n):
        mask = np.zeros((1, 6, 6), np.float32)
        mask[0, :, : i + 1] = 1
        samples.append(Sample(rng.uniform(size=(3, 6, 6)).astype(np.float32), mask, f"s{i}"))
    return Dataset(samples)


def test_flip_doubles_and_orders():
    ds = _asym_dataset()
    out = flip_augment(ds)
    assert len(out) == 6
    for i in range(3):
        assert out[i] is ds[i]
        np.testing.assert_array_equal(out[3 + i].mask, ds[i].mask[..., ::-1])
        np.testing.assert_array_equal(out[3 + i].image, ds[i].image[..., ::-1])


def test_flip_twice_is_identity():
    ds = _asym_dataset()
    twice = flip_augment(flip_augment(ds))
    for i in range(3):
        np.testing.assert_array_equal(twice[9 + i].image, ds[i].image)
        np.testing.assert_array_equal(twice[9 + i].mask, ds[i].mask)


# -- validation --------------------------------------------------------------
def test_validator_rejects_size_mismatch():
    with pytest.raises(DatasetError, match="does not match"):
        validate_sample(Sample(np.zeros((3, 4, 4)), np.zeros((1, 5, 5))))


def test_validator_rejects_bad_labels():
    with pytest.raises(DatasetError, match="labels"):
        validate_sample(Sample(np.zeros((3, 4, 4)), np.full((1, 4, 4), 2.0)))


# -- synthetic generator -----------------------------------------------------
def test_synthetic_deterministic():
    a = generate_synthetic(SynthConfig(seed=11, count=4))
    b = generate_synthetic(SynthConfig(seed=11, count=4))
    for x, y in zip(a.samples, b.samples):
        assert x.image.tobytes() == y.image.tobytes()
        assert x.mask.tobytes() == y.mask.tobytes()


def test_synthetic_seed_changes_output():
    a = generate_synthetic(SynthConfig(seed=1, count=1))
    b = generate_synthetic(SynthConfig(seed=2, count=1))
    assert not np.array_equal(a[0].image, b[0].image)


def test_samples_independent_of_count():
    a = generate_synthetic(SynthConfig(seed=5, count=2))
    b = generate_synthetic(SynthConfig(seed=5, count=5))
    np.testing.assert_array_equal(a[1].image, b[1].image)


def test_zero_strands_empty_masks():
    ds = generate_synthetic(SynthConfig(seed=0, count=5, strand_count=(0, 0)))
    ds.validate()
    assert all(s.mask.sum() == 0 for s in ds.samples)


@pytest.mark.parametrize("background", ["flat", "gradient", "textured", "mixed"])
def test_samples_valid(background):
    ds = generate_synthetic(SynthConfig(seed=3, count=4, size=48, background=background))
    ds.validate()
    for s in ds.samples:
        assert s.image.shape == (3, 48, 48) and s.image.dtype == np.float32


def test_coverage_within_bounds_over_100_samples():
    cfg = SynthConfig(seed=21, count=100)
    cov = np.array([s.mask.mean() for s in generate_synthetic(cfg).samples])
    lo, hi = cfg.coverage_bounds
    assert lo <= cov.mean() <= hi
    assert np.all((cov >= lo) & (cov <= hi))


def test_coarse_labels_iou_band():
    exact = generate_synthetic(SynthConfig(seed=3, count=30))
    coarse = generate_synthetic(SynthConfig(seed=3, count=30, coarse_radius=1))
    scores = [iou(confusion(c.mask, e.mask)) for c, e in zip(coarse.samples, exact.samples)]
    assert 0.45 <= min(scores) and max(scores) <= 0.85
    for c, e in zip(coarse.samples, exact.samples):
        np.testing.assert_array_equal(c.image, e.image)


# -- dataset directory -------------------------------------------------------
def test_directory_round_trip(tmp_path):
    ds = generate_synthetic(SynthConfig(seed=4, count=5, size=32))
    write_dataset(tmp_path, {"train": ds.subset(range(3)), "val": ds.subset([3, 4])})
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["version"] == 1 and len(manifest["samples"]) == 5
    train = load_dataset(tmp_path, "train")
    val = load_dataset(tmp_path, "val")
    assert len(train) == 3 and len(val) == 2
    for s, t in zip(train.samples, ds.samples[:3]):
        np.testing.assert_allclose(s.image, t.image, atol=0.5 / 255 + 1e-7)
        np.testing.assert_array_equal(s.mask, t.mask)


def test_load_resizes(tmp_path):
    ds = generate_synthetic(SynthConfig(seed=4, count=2, size=32))
    write_dataset(tmp_path, {"test": ds})
    out = load_dataset(tmp_path, "test", size=64)
    assert out[0].image.shape == (3, 64, 64)
    assert set(np.unique(out[0].mask)) <= {0.0, 1.0}


def test_missing_manifest(tmp_path):
    with pytest.raises(DatasetError, match="manifest"):
        load_dataset(tmp_path)
