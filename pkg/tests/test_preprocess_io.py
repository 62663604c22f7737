import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lvquant.data import read_dataset, write_dataset
from lvquant.data.geometry import compute_areas, compute_dimensions, compute_rwt, landmark_angle
from lvquant.data.io import HEADER, decode_frames, encode_frames
from lvquant.data.phantom import PhantomParams, generate_dataset, generate_phantom_sequence
from lvquant.data.preprocess import (
    augment_crop,
    crop_offsets,
    denormalize_targets,
    normalize_targets,
    preprocess_frame,
    preprocess_sequence,
    transform_contour,
)
from lvquant.errors import BadMagicError, ChecksumError, DimensionError, MissingFileError, SizeMismatchError


def test_identity_crop_standardizes_only():
    img = np.random.default_rng(0).random((80, 80))
    out, sp, padded = preprocess_frame(img, (39.5, 39.5), 1.25)
    ref = (img - img.mean()) / img.std()
    np.testing.assert_allclose(out, ref, atol=1e-5)
    assert sp == 1.25 and not padded


def test_large_roi_doubles_effective_spacing():
    img = np.zeros((200, 200))
    img[50:150, 50:150] = 1.0
    _, sp, padded = preprocess_frame(img, (99.5, 99.5), 1.0, roi_size=160)
    assert sp == 2.0 and not padded


def test_roi_outside_image_is_padded_and_flagged():
    img = np.arange(80 * 80, dtype=float).reshape(80, 80)
    out, _, padded = preprocess_frame(img, (10.0, 10.0), 1.0)
    assert padded
    assert np.isfinite(out).all()


def test_sequence_standardization_is_global():
    seq = generate_phantom_sequence(PhantomParams())
    frames, sp, _ = preprocess_sequence(seq.frames, seq.roi_center, seq.pixel_spacing)
    assert frames.shape == (20, 80, 80)
    assert abs(frames.mean()) < 1e-5 and abs(frames.std() - 1) < 1e-4
    assert sp == pytest.approx(seq.pixel_spacing * 72 / 80)


def test_labels_survive_the_resize():
    p = PhantomParams(noise_sigma=0.0, eccentricity=0.2, rotation=0.2)
    seq = generate_phantom_sequence(p)
    roi = 72.0
    _, sp, _ = preprocess_sequence(seq.frames, seq.roi_center, seq.pixel_spacing, roi)
    lms = transform_contour(seq.landmarks, seq.roi_center, roi)
    for (inner, outer), lab in zip(seq.contours, seq.labels):
        i2 = transform_contour(inner, seq.roi_center, roi)
        o2 = transform_contour(outer, seq.roi_center, roi)
        got = np.r_[compute_areas(i2, o2, sp), compute_dimensions(i2, sp, landmark_angle(i2, lms)),
                    compute_rwt(i2, o2, lms, sp)]
        np.testing.assert_allclose(got, lab.as_row()[:11], rtol=2e-2)


def test_eval_crop_is_centered_and_repeatable():
    img = np.arange(6400, dtype=np.float32).reshape(80, 80)
    a = augment_crop(img, "eval")
    assert a.shape == (75, 75)
    assert a[0, 0] == img[2, 2]
    np.testing.assert_array_equal(a, augment_crop(img, "eval"))


def test_train_crop_is_seeded_and_one_of_36():
    img = np.random.default_rng(1).random((80, 80))
    allowed = {augment_crop(img, offset=o).tobytes() for o in crop_offsets()}
    assert len(allowed) == 36
    for seed in range(50):
        c = augment_crop(img, "train", seed=seed)
        assert c.tobytes() in allowed
        np.testing.assert_array_equal(c, augment_crop(img, "train", seed=seed))


def test_crop_rejects_wrong_shape():
    with pytest.raises(DimensionError):
        augment_crop(np.zeros((64, 64)))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.5, 3.0), st.integers(0, 10_000))
def test_target_normalization_round_trip(spacing, seed):
    labels = np.random.default_rng(seed).uniform(0, 3000, size=(20, 11))
    back = denormalize_targets(normalize_targets(labels, spacing), spacing)
    np.testing.assert_allclose(back, labels, rtol=1e-12)


def test_normalization_scales():
    row = np.array([[6400.0, 6400.0, 80, 80, 80, 8, 8, 8, 8, 8, 8]])
    out = normalize_targets(row, 1.0)
    np.testing.assert_allclose(out, [[1, 1, 1, 1, 1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1]])


@pytest.fixture
def small_dir(tmp_path):
    seqs = generate_dataset(3, seed=2, frames_per_cycle=8)
    write_dataset(seqs, tmp_path / "ds")
    return seqs, tmp_path / "ds"


def test_round_trip_is_bit_identical(small_dir):
    seqs, path = small_dir
    back = read_dataset(path)
    assert [s.subject_id for s in back] == [s.subject_id for s in seqs]
    for a, b in zip(seqs, back):
        assert a.frames.tobytes() == b.frames.tobytes()
        assert a.label_matrix().tobytes() == b.label_matrix().tobytes()
        assert a.pixel_spacing == b.pixel_spacing
        np.testing.assert_array_equal(a.landmarks, b.landmarks)


def test_manifest_layout(small_dir):
    _, path = small_dir
    man = json.loads((path / "manifest.json").read_text())
    s0 = man["subjects"][0]
    assert s0["frames_file"] == "frames_s000.bin" and s0["labels_file"] == "labels_s000.csv"
    raw = (path / s0["frames_file"]).read_bytes()
    magic, f, h, w = HEADER.unpack_from(raw)
    assert (magic, f, h, w) == (b"LVQ1", 8, 80, 80)
    assert len(raw) == 16 + 4 * f * h * w
    header = (path / s0["labels_file"]).read_text().splitlines()[0]
    assert header == "frame,cavity_area,myo_area,dim1,dim2,dim3,rwt_is,rwt_i,rwt_il,rwt_al,rwt_a,rwt_as,phase"


def test_truncated_frames_name_the_file(small_dir):
    _, path = small_dir
    f = path / "frames_s001.bin"
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(SizeMismatchError, match="frames_s001.bin"):
        read_dataset(path, verify_checksums=False)


def test_bad_magic(small_dir):
    _, path = small_dir
    f = path / "frames_s000.bin"
    f.write_bytes(b"XXXX" + f.read_bytes()[4:])
    with pytest.raises(BadMagicError):
        read_dataset(path, verify_checksums=False)


def test_missing_subject_file_names_the_subject(small_dir):
    _, path = small_dir
    (path / "frames_s002.bin").unlink()
    with pytest.raises(MissingFileError, match="s002"):
        read_dataset(path)


def test_checksum_detects_tampering(small_dir):
    _, path = small_dir
    f = path / "frames_s000.bin"
    raw = bytearray(f.read_bytes())
    raw[100] ^= 1
    f.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        read_dataset(path)


def test_frames_codec():
    arr = np.random.default_rng(0).random((2, 3, 4)).astype(np.float32)
    np.testing.assert_array_equal(decode_frames(encode_frames(arr)), arr)
