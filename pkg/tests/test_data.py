"""IDX ingestion and the synthetic low-rank dataset generator."""

import gzip
import struct

import numpy as np
import pytest

from maskrecon.data import SyntheticSpec, gen_synthetic, load_idx
from maskrecon.errors import (CountMismatchError, DataFormatError,
                              InvalidRangeError, TruncatedDataError)
from maskrecon.rank_analysis import approximate_rank


def write_idx(tmp_path, pixels, labels, img_name="imgs", lbl_name="lbls",
              img_magic=0x803, lbl_magic=0x801, gz=False,
              img_extra=b"", lbl_extra=b"", img_trunc=0):
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, r, c = pixels.shape
    img_blob = struct.pack(">IIII", img_magic, n, r, c) + pixels.tobytes() + img_extra
    if img_trunc:
        img_blob = img_blob[:-img_trunc]
    lbl_blob = struct.pack(">II", lbl_magic, len(labels)) + bytes(labels) + lbl_extra
    if gz:
        img_blob = gzip.compress(img_blob)
        lbl_blob = gzip.compress(lbl_blob)
    ip = tmp_path / img_name
    lp = tmp_path / lbl_name
    ip.write_bytes(img_blob)
    lp.write_bytes(lbl_blob)
    return ip, lp


def sample_pixels():
    rng = np.random.default_rng(0)
    return rng.integers(0, 256, size=(5, 4, 3), dtype=np.uint8)


def test_load_idx_roundtrip(tmp_path):
    pixels = sample_pixels()
    ip, lp = write_idx(tmp_path, pixels, [0, 1, 2, 3, 4])
    ds = load_idx(ip, lp)
    assert len(ds) == 5
    assert ds.labels == (0, 1, 2, 3, 4)
    assert ds.images[0].data.shape == (4, 3, 1)
    assert np.allclose(ds.images[2].data[:, :, 0], pixels[2] / 255.0)


def test_load_idx_255_maps_to_one(tmp_path):
    pixels = np.full((1, 2, 2), 255, dtype=np.uint8)
    ip, lp = write_idx(tmp_path, pixels, [0])
    ds = load_idx(ip, lp)
    assert ds.images[0].data.max() == 1.0


def test_load_idx_gzip_transparent(tmp_path):
    pixels = sample_pixels()
    ip, lp = write_idx(tmp_path, pixels, [1, 0, 1, 0, 1], gz=True)
    ds = load_idx(ip, lp)
    assert len(ds) == 5
    assert np.allclose(ds.images[4].data[:, :, 0], pixels[4] / 255.0)


def test_load_idx_count_mismatch(tmp_path):
    ip, lp = write_idx(tmp_path, sample_pixels(), [0, 1, 2])
    with pytest.raises(CountMismatchError):
        load_idx(ip, lp)


def test_load_idx_bad_image_magic_names_observed_value(tmp_path):
    ip, lp = write_idx(tmp_path, sample_pixels(), [0] * 5, img_magic=0x805)
    with pytest.raises(DataFormatError) as e:
        load_idx(ip, lp)
    assert "0x00000805" in str(e.value)


def test_load_idx_bad_label_magic(tmp_path):
    ip, lp = write_idx(tmp_path, sample_pixels(), [0] * 5, lbl_magic=0x17)
    with pytest.raises(DataFormatError):
        load_idx(ip, lp)


def test_load_idx_truncated_pixels(tmp_path):
    ip, lp = write_idx(tmp_path, sample_pixels(), [0] * 5, img_trunc=7)
    with pytest.raises(TruncatedDataError):
        load_idx(ip, lp)


def test_load_idx_trailing_bytes(tmp_path):
    ip, lp = write_idx(tmp_path, sample_pixels(), [0] * 5, img_extra=b"\x00\x00")
    with pytest.raises(DataFormatError):
        load_idx(ip, lp)


def test_synthetic_rank_one_images():
    spec = SyntheticSpec(count=12, height=10, width=10, rank=1, noise_sigma=0.0)
    ds = gen_synthetic(spec, 3)
    assert all(approximate_rank(img) == 1 for img in ds.images)


def test_synthetic_deterministic():
    spec = SyntheticSpec(count=8, height=6, width=6, rank=2, noise_sigma=0.02)
    a = gen_synthetic(spec, 9)
    b = gen_synthetic(spec, 9)
    for x, y in zip(a.images, b.images):
        assert x.data.tobytes() == y.data.tobytes()
    assert a.labels == b.labels


def test_synthetic_round_robin_labels():
    spec = SyntheticSpec(count=7, height=5, width=5, classes=3)
    ds = gen_synthetic(spec, 1)
    assert ds.labels == (0, 1, 2, 0, 1, 2, 0)


def test_synthetic_rgb_shapes():
    spec = SyntheticSpec(count=2, height=6, width=5, channels=3, rank=2)
    ds = gen_synthetic(spec, 4)
    assert ds.images[0].data.shape == (6, 5, 3)


def test_synthetic_entries_in_unit_interval():
    spec = SyntheticSpec(count=10, height=8, width=8, rank=3, noise_sigma=0.5)
    ds = gen_synthetic(spec, 5)
    for img in ds.images:
        assert img.data.min() >= 0.0 and img.data.max() <= 1.0


def test_synthetic_spec_validation():
    with pytest.raises(InvalidRangeError):
        SyntheticSpec(count=0, height=4, width=4)
    with pytest.raises(InvalidRangeError):
        SyntheticSpec(count=1, height=4, width=4, rank=5)
    with pytest.raises(InvalidRangeError):
        SyntheticSpec(count=1, height=4, width=4, channels=2)
    with pytest.raises(InvalidRangeError):
        SyntheticSpec(count=1, height=4, width=4, noise_sigma=-0.1)
