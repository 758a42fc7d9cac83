"""Data pipeline tests: loaders, normalization, degradation, patch pairs,
and the phantom generator."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vitsr import data, metrics
from vitsr.errors import (DataError, DimensionError, LayoutMismatchError,
                          MissingPathError)

RNG = np.random.default_rng(0xDA7A)


def write_raw_volume(tmp_path, shape, dtype="uint16", endian="little", name="vol"):
    h, w, d = shape
    np_dtype = np.dtype(("<" if endian == "little" else ">") + {"uint16": "u2", "float32": "f4"}[dtype])
    volume = (RNG.random((h, w, d)) * 1000).astype(np_dtype)
    raw = tmp_path / f"{name}.raw"
    volume.astype(np_dtype).tofile(raw)
    data.write_layout(tmp_path / f"{name}.layout",
                      data.RawLayout(shape=shape, dtype=dtype, endian=endian))
    return raw, volume


# ---------------------------------------------------------------------------
# loading

def test_load_raw_volume_one_slice_per_depth_index(tmp_path):
    raw, volume = write_raw_volume(tmp_path, (24, 20, 6))
    ss = data.load_slices(raw)
    assert len(ss) == 6
    assert ss.slices[0].shape == (24, 20)
    np.testing.assert_array_equal(ss.slices[3], volume[:, :, 3].astype(np.float64))


def test_volume_slice_count_arithmetic(tmp_path):
    # depth slices per volume times volume count; the full-size corpus
    # (500 volumes of depth 96) yields 48000 training slices
    for name, depth in [("a", 4), ("b", 4), ("c", 4)]:
        write_raw_volume(tmp_path, (16, 16, depth), name=name)
    total = sum(len(data.load_slices(tmp_path / f"{n}.raw")) for n in ("a", "b", "c"))
    assert total == 3 * 4
    assert 500 * 96 == 48_000


def test_load_raw_volume_big_endian(tmp_path):
    raw, volume = write_raw_volume(tmp_path, (8, 8, 2), endian="big")
    ss = data.load_slices(raw)
    np.testing.assert_array_equal(ss.slices[1], volume[:, :, 1].astype(np.float64))


def test_load_raw_volume_size_mismatch(tmp_path):
    raw, _ = write_raw_volume(tmp_path, (8, 8, 2))
    data.write_layout(tmp_path / "vol.layout",
                      data.RawLayout(shape=(8, 8, 3), dtype="uint16"))
    with pytest.raises(LayoutMismatchError):
        data.load_slices(raw)


def test_load_missing_path():
    with pytest.raises(MissingPathError):
        data.load_slices("/nonexistent/nowhere")


def test_load_directory_of_rasters_sorted(tmp_path):
    imgs = [RNG.random((16, 16)) for _ in range(3)]
    for i, img in enumerate(imgs):
        data.save_image(tmp_path / f"slice_{i:02d}.png", img)
    ss = data.load_slices(tmp_path)
    assert len(ss) == 3
    for loaded, orig in zip(ss.slices, imgs):
        np.testing.assert_allclose(loaded / 65535.0, orig, atol=1.0 / 65535)


def test_load_empty_directory(tmp_path):
    with pytest.raises(DataError):
        data.load_slices(tmp_path)


def test_load_unreadable_file(tmp_path):
    bad = tmp_path / "junk.png"
    bad.write_bytes(b"not a png at all")
    with pytest.raises(DataError):
        data.load_slices(tmp_path)


def test_load_labeled_class_subdirectories(tmp_path):
    for cls in ("lobes", "rings"):
        d = tmp_path / cls
        d.mkdir()
        data.save_image(d / "s0.png", RNG.random((16, 16)))
    sets = data.load_labeled(tmp_path)
    assert [s.tag for s in sets] == ["lobes", "rings"]


def test_load_twice_is_bitwise_identical(tmp_path):
    raw, _ = write_raw_volume(tmp_path, (12, 12, 3))
    a = data.load_slices(raw)
    b = data.load_slices(raw)
    for sa, sb in zip(a.slices, b.slices):
        np.testing.assert_array_equal(sa, sb)


def test_image_roundtrip_16bit(tmp_path):
    img = RNG.random((20, 20))
    data.save_image(tmp_path / "x.png", img)
    back = data.load_image(tmp_path / "x.png") / 65535.0
    assert np.abs(back - img).max() <= 0.5 / 65535 + 1e-12


# ---------------------------------------------------------------------------
# normalize

def test_normalize_two_values():
    out = data.normalize(np.array([[2.0, 4.0], [2.0, 4.0]]))
    np.testing.assert_array_equal(out, [[0.0, 1.0], [0.0, 1.0]])


def test_normalize_constant_slice_is_zero():
    out = data.normalize(np.full((5, 5), 9.0))
    np.testing.assert_array_equal(out, np.zeros((5, 5)))


def test_normalize_idempotent():
    x = RNG.random((10, 10)) * 100 - 30
    once = data.normalize(x)
    np.testing.assert_allclose(data.normalize(once), once, atol=1e-12)
    assert once.min() == 0.0 and once.max() == 1.0


def test_normalize_nan_rejected():
    x = np.ones((4, 4))
    x[2, 2] = np.nan
    with pytest.raises(DataError):
        data.normalize(x)


# ---------------------------------------------------------------------------
# degrade

def test_degrade_shapes_and_constant():
    hr = np.full((32, 48), 0.5)
    lr = data.degrade(hr, 2)
    assert lr.shape == (16, 24)
    np.testing.assert_allclose(lr, 0.5, atol=1e-12)


def test_degrade_indivisible_extents():
    with pytest.raises(DimensionError):
        data.degrade(np.zeros((30, 30)), 4)


def test_degrade_then_upscale_roundtrip_on_smooth_blob():
    ax = np.linspace(-1, 1, 64)
    xx, yy = np.meshgrid(ax, ax)
    blob = np.exp(-(xx ** 2 + yy ** 2) / 0.18)
    lr = data.degrade(blob, 2)
    up = metrics.bicubic_resize(lr, 2.0)
    assert metrics.psnr(blob, up) > 30.0


def test_degrade_round_trip_extents():
    hr = RNG.random((64, 64))
    for m in (2, 4):
        assert data.degrade(hr, m).shape == (64 // m, 64 // m)


# ---------------------------------------------------------------------------
# center_patch_pair

def test_center_patch_pair_even_case():
    lr = RNG.random((32, 32))
    hr = RNG.random((64, 64))
    pair = data.center_patch_pair(lr, hr, n=16, m=2)
    np.testing.assert_array_equal(pair.lr, lr[8:24, 8:24])
    np.testing.assert_array_equal(pair.hr, hr[16:48, 16:48])
    assert pair.scale == 2


def test_center_patch_pair_full_extent():
    lr = RNG.random((16, 16))
    hr = RNG.random((32, 32))
    pair = data.center_patch_pair(lr, hr, n=16, m=2)
    np.testing.assert_array_equal(pair.lr, lr)
    np.testing.assert_array_equal(pair.hr, hr)


def test_center_patch_pair_odd_extents_floor():
    lr = RNG.random((17, 19))
    hr = RNG.random((34, 38))
    pair = data.center_patch_pair(lr, hr, n=8, m=2)
    # offsets floor((17-8)/2)=4, floor((19-8)/2)=5
    np.testing.assert_array_equal(pair.lr, lr[4:12, 5:13])
    np.testing.assert_array_equal(pair.hr, hr[8:24, 10:26])


def test_center_patch_pair_rejects_mismatched_ratio():
    with pytest.raises(DimensionError):
        data.center_patch_pair(np.zeros((16, 16)), np.zeros((33, 32)), n=8, m=2)


def test_center_patch_pair_rejects_oversized_patch():
    with pytest.raises(DimensionError):
        data.center_patch_pair(np.zeros((16, 16)), np.zeros((32, 32)), n=20, m=2)


@settings(deadline=None, max_examples=200)
@given(st.integers(8, 40), st.integers(8, 40), st.sampled_from([1, 2, 4]),
       st.integers(0, 10 ** 6))
def test_center_patch_pair_invariant(h, w, m, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, min(h, w) + 1))
    lr = rng.random((h, w))
    hr = rng.random((m * h, m * w))
    pair = data.center_patch_pair(lr, hr, n=n, m=m)
    assert pair.lr.shape == (n, n)
    assert pair.hr.shape == (m * n, m * n)
    oy, ox = (h - n) // 2, (w - n) // 2
    np.testing.assert_array_equal(pair.hr, hr[m * oy:m * (oy + n), m * ox:m * (ox + n)])


# ---------------------------------------------------------------------------
# phantoms

def test_phantom_deterministic():
    a = data.synth_phantom(123, 64)
    b = data.synth_phantom(123, 64)
    np.testing.assert_array_equal(a, b)


def test_phantom_range_and_contrast():
    for seed in range(6):
        img = data.synth_phantom(seed, 48)
        assert img.min() >= 0.0 and img.max() <= 1.0
        assert img.std() > 0.05


def test_phantom_families_differ():
    a = data.synth_phantom(7, 32, family=0)
    b = data.synth_phantom(7, 32, family=1)
    assert not np.array_equal(a, b)


def test_phantom_set_tags_and_count():
    ss = data.phantom_set(5, 32, seed=10, family=1, tag="many-lobes")
    assert len(ss) == 5 and ss.tag == "many-lobes"
    assert all(s.shape == (32, 32) for s in ss.slices)


def test_phantom_size_guard():
    with pytest.raises(DimensionError):
        data.synth_phantom(0, 4)
