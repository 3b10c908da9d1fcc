import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from vatseg.data.phantom import PhantomParams, generate_phantom
from vatseg.data.volume import LabelMask, Volume
from vatseg.preprocess import (
    assemble_channels,
    contrast_adjust,
    crop_xy_array,
    ff_threshold,
    mask_background,
    nearest_rank,
    pad_slices,
    pad_slices_array,
    pad_xy,
    pad_xy_array,
    preprocess_volume,
    restore_labels,
)


def test_contrast_adjust_ramp():
    s = np.arange(1, 101, dtype=np.float32).reshape(10, 10)
    out = contrast_adjust(s)
    assert nearest_rank(s, 99) == 99
    assert out.max() == 1.0
    assert out.flat[99] == 1.0
    assert out.flat[49] == pytest.approx(50 / 99, abs=1e-6)


def test_contrast_adjust_degenerate_slices():
    np.testing.assert_array_equal(contrast_adjust(np.full((4, 5), 3.5)), 1.0)
    np.testing.assert_array_equal(contrast_adjust(np.zeros((4, 5))), 0.0)


def test_contrast_adjust_counts_zero_pixels():
    # 99 zeros and one bright pixel: the 99th percentile is 0, so the slice maps to zeros
    s = np.zeros(100, np.float32).reshape(10, 10)
    s[0, 0] = 5.0
    np.testing.assert_array_equal(contrast_adjust(s), 0.0)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float32, (8, 8), elements=st.floats(0, 1000, width=32)))
def test_contrast_adjust_range_and_idempotence(s):
    out = contrast_adjust(s)
    assert out.min() >= 0 and out.max() <= 1
    np.testing.assert_allclose(contrast_adjust(out), out, atol=1e-6)


def test_assemble_channels_round_trip():
    rng = np.random.default_rng(0)
    w, f = rng.random((2, 3, 4)).astype(np.float32), rng.random((2, 3, 4)).astype(np.float32)
    ff = rng.choice(np.array([0, 0.5, 1], np.float32), (2, 3, 4))
    vol = assemble_channels(w, f, ff)
    assert vol.water.tobytes() == w.tobytes()
    assert vol.fat.tobytes() == f.tobytes()
    assert vol.fat_fraction.tobytes() == ff.tobytes()
    with pytest.raises(ValueError, match="depth"):
        assemble_channels(w, f, ff[:1])


def test_pad_xy_examples():
    vol = Volume(np.ones((3, 21, 256, 176), np.float32))
    padded, info = pad_xy(vol)
    assert padded.dims == (21, 256, 256)
    assert (info.top, info.left) == (0, 40)
    assert not padded.data[..., :40].any() and not padded.data[..., 216:].any()
    assert padded.data[..., 40:216].all()
    same, info = pad_xy(Volume(np.ones((3, 2, 256, 256), np.float32)))
    assert same.data.tobytes() == np.ones((3, 2, 256, 256), np.float32).tobytes()
    with pytest.raises(ValueError, match="exceeds"):
        pad_xy(Volume(np.ones((3, 1, 300, 10), np.float32)))


@settings(max_examples=40, deadline=None)
@given(h=st.integers(1, 20), w=st.integers(1, 20), th=st.integers(20, 32), tw=st.integers(20, 32))
def test_pad_crop_inverse(h, w, th, tw):
    a = np.random.default_rng(h * 31 + w).random((2, h, w)).astype(np.float32)
    padded, info = pad_xy_array(a, (th, tw))
    assert padded.shape == (2, th, tw)
    assert crop_xy_array(padded, info).tobytes() == a.tobytes()
    assert padded.sum() == pytest.approx(a.sum())


def test_pad_slices_examples():
    vol = Volume(np.random.default_rng(0).random((3, 20, 4, 4)).astype(np.float32))
    out, added = pad_slices(vol)
    assert out.dims[0] == 24 and added == 4
    for z in range(20, 24):
        np.testing.assert_array_equal(out.data[:, z], vol.data[:, 19])
    same, added = pad_slices(Volume(np.zeros((3, 24, 2, 2), np.float32)))
    assert added == 0 and same.dims[0] == 24
    assert pad_slices_array(np.zeros((21, 2, 2)))[1] == 3
    with pytest.raises(ValueError):
        pad_slices_array(np.zeros((25, 2, 2)))


def test_mask_background_examples():
    vol = Volume(np.random.default_rng(1).random((3, 2, 4, 4)).astype(np.float32))
    assert mask_background(vol, np.ones((2, 4, 4), bool)).data.tobytes() == vol.data.tobytes()
    assert not mask_background(vol, np.zeros((2, 4, 4), bool)).data.any()


def test_mask_background_recovers_noise_free_phantom():
    params = PhantomParams(seed=3, dims=(4, 48, 48))
    clean, _, body = generate_phantom(params)
    noisy, _, body2 = generate_phantom(PhantomParams(seed=3, dims=(4, 48, 48), include_background_noise=True))
    assert np.array_equal(body, body2)
    assert noisy.data[:, ~body].any()
    masked = mask_background(noisy, body)
    assert masked.data[:, body].tobytes() == clean.data[:, body].tobytes()
    assert masked.data.tobytes() == clean.data.tobytes()


def test_ff_threshold_examples():
    labels = np.array([[[1, 2, 0, 1]]], np.uint8)
    ff = np.array([[[0.49, 0.5, 0.1, 1.0]]], np.float32)
    np.testing.assert_array_equal(ff_threshold(labels, ff), [[[0, 2, 0, 1]]])
    np.testing.assert_array_equal(ff_threshold(LabelMask(labels), np.ones_like(ff)), labels)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.uint8, (3, 4, 5), elements=st.integers(0, 2)),
       hnp.arrays(np.float32, (3, 4, 5), elements=st.floats(0, 1, width=32)))
def test_ff_threshold_only_shrinks(labels, ff):
    out = ff_threshold(labels, ff)
    assert np.count_nonzero(out) <= np.count_nonzero(labels)
    assert np.all((out == labels) | (out == 0))


@pytest.mark.parametrize("target_depth", [None, 24])
def test_fat_fraction_survives_full_chain(target_depth):
    vol, labels, body = generate_phantom(PhantomParams(seed=5, dims=(12, 48, 48)))
    prep = preprocess_volume(vol, body, target_xy=(64, 64), target_depth=target_depth)
    restored = restore_labels(prep.image.transpose(1, 0, 2, 3), prep).transpose(1, 0, 2, 3)
    assert restored[2].tobytes() == vol.fat_fraction.tobytes()
    assert prep.image.shape == (3, target_depth or 12, 64, 64)
    assert restored[0].max() <= 1 and restored[1].max() <= 1
