import numpy as np
import pytest

from faceflow import dataio
from faceflow.errors import DataError
from faceflow.losses import LandmarkSet
from faceflow.synthdata import generate_dataset


def test_png_round_trip_quantization(tmp_path, rng):
    image = rng.uniform(-1, 1, size=(3, 32, 32))
    path = tmp_path / "img.png"
    dataio.save_image(path, image)
    back = dataio.load_image(path, dtype=np.float64)
    assert np.abs(back - np.clip(image, -1, 1)).max() <= 1.0 / 255.0 + 1e-9


def test_png_round_trip_idempotent(tmp_path, rng):
    image = rng.uniform(-1, 1, size=(3, 16, 16))
    p1 = tmp_path / "a.png"
    p2 = tmp_path / "b.png"
    dataio.save_image(p1, image)
    once = dataio.load_image(p1)
    dataio.save_image(p2, once)
    twice = dataio.load_image(p2)
    assert np.array_equal(once, twice)


def test_missing_image_raises(tmp_path):
    with pytest.raises(DataError):
        dataio.load_image(tmp_path / "nope.png")


def test_landmark_sidecar_round_trip(tmp_path):
    lm = LandmarkSet(np.array([[1.25, 2.5], [10.0, 11.75]]))
    path = tmp_path / "face.png.lm.txt"
    dataio.save_landmarks(path, lm)
    back = dataio.load_landmarks(path)
    assert np.allclose(back.points, lm.points)


def test_landmark_sidecar_malformed(tmp_path):
    path = tmp_path / "bad.lm.txt"
    path.write_text("1.0 2.0 3.0\n")
    with pytest.raises(DataError):
        dataio.load_landmarks(path)


def test_manifest_round_trip(tmp_path, rng):
    domain_a, _ = generate_dataset(0, 4, 32)
    entries = []
    for i, sample in enumerate(domain_a):
        rel = f"img_{i}.png"
        dataio.save_image(tmp_path / rel, sample.image)
        entries.append((rel, sample.label, sample.landmarks))
    manifest = tmp_path / "manifest.txt"
    dataio.write_manifest(manifest, entries)
    back = dataio.read_manifest(manifest)
    assert len(back) == 4
    for (path, label, lm), sample in zip(back, domain_a):
        assert path.exists()
        assert label == sample.label
        assert np.allclose(lm.points, sample.landmarks.points, atol=1e-6)


def test_manifest_missing_file(tmp_path):
    manifest = tmp_path / "manifest.txt"
    manifest.write_text("ghost.png 1 1.0 2.0\n")
    with pytest.raises(DataError, match="missing"):
        dataio.read_manifest(manifest)


def test_manifest_nonuniform_count(tmp_path, rng):
    img = rng.uniform(-1, 1, size=(3, 16, 16))
    dataio.save_image(tmp_path / "a.png", img)
    dataio.save_image(tmp_path / "b.png", img)
    manifest = tmp_path / "manifest.txt"
    manifest.write_text("a.png 0 1.0 2.0\nb.png 1 1.0 2.0 3.0 4.0\n")
    with pytest.raises(DataError, match="landmark count"):
        dataio.read_manifest(manifest)


def test_tensor_blob_round_trip(tmp_path, rng):
    arr = rng.normal(size=(2, 2, 5, 5)).astype(np.float32)
    path = tmp_path / "flow.fft"
    dataio.save_tensor_blob(path, arr)
    back = dataio.load_tensor_blob(path)
    assert np.array_equal(back, arr)
    assert back.dtype == np.float32


def test_tensor_blob_truncation(tmp_path, rng):
    arr = rng.normal(size=(1, 1, 4, 4)).astype(np.float32)
    path = tmp_path / "x.fft"
    dataio.save_tensor_blob(path, arr)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(DataError, match="truncated"):
        dataio.load_tensor_blob(path)


def test_tensor_blob_bad_magic(tmp_path):
    path = tmp_path / "x.fft"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(DataError, match="magic"):
        dataio.load_tensor_blob(path)
