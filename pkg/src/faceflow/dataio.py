"""Image, landmark, manifest, and tensor-blob file formats.

Images are 8-bit RGB PNG; tensors in [-1, 1] quantize as round((x+1)/2*255),
so a save/load round trip stays within 1/255 per channel. Landmarks travel
either in manifests or in plain-text sidecars (one "x y" line per point).

Manifest format (one sample per line, whitespace separated):
    <relative image path> <label 0|1> <x0> <y0> <x1> <y1> ...
Paths resolve against the manifest's directory; the landmark count must be
uniform across the file.

Tensor blob format (little-endian): magic "FFTB", u32 version, u32 dtype code
(0 = float32), 4 x u32 shape, then the raw payload.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np
from PIL import Image

from .errors import DataError
from .losses import LandmarkSet
from .synthdata import FaceSpec, Sample

BLOB_MAGIC = b"FFTB"
BLOB_VERSION = 1


def tensor_to_uint8(image: np.ndarray) -> np.ndarray:
    """Quantize a (3, H, W) array in [-1, 1] to (H, W, 3) uint8."""
    arr = np.clip(image, -1.0, 1.0)
    q = np.rint((arr + 1.0) * 0.5 * 255.0).astype(np.uint8)
    return q.transpose(1, 2, 0)


def uint8_to_tensor(q: np.ndarray, dtype=np.float32) -> np.ndarray:
    return (q.astype(dtype).transpose(2, 0, 1) / 255.0) * 2.0 - 1.0


def save_image(path, image: np.ndarray) -> None:
    Image.fromarray(tensor_to_uint8(image), mode="RGB").save(Path(path))


def load_image(path, dtype=np.float32) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise DataError(f"image file not found: {p}")
    with Image.open(p) as im:
        rgb = np.asarray(im.convert("RGB"))
    return uint8_to_tensor(rgb, dtype)


def save_landmarks(path, landmarks: LandmarkSet) -> None:
    lines = [f"{x:.6f} {y:.6f}" for x, y in landmarks.points]
    Path(path).write_text("\n".join(lines) + "\n")


def load_landmarks(path) -> LandmarkSet:
    p = Path(path)
    if not p.exists():
        raise DataError(f"landmark sidecar not found: {p}")
    pts = []
    for ln, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"{p}:{ln}: expected 'x y', got {line!r}")
        pts.append((float(parts[0]), float(parts[1])))
    if not pts:
        raise DataError(f"{p}: no landmark lines")
    return LandmarkSet(np.array(pts))


def write_manifest(path, entries: Sequence[Tuple[str, int, LandmarkSet]]) -> None:
    """``entries`` holds (relative image path, label, landmarks)."""
    lines = []
    for rel, label, lm in entries:
        coords = " ".join(f"{v:.6f}" for v in lm.points.ravel())
        lines.append(f"{rel} {label} {coords}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> List[Tuple[Path, int, LandmarkSet]]:
    p = Path(path)
    if not p.exists():
        raise DataError(f"manifest not found: {p}")
    root = p.parent
    out = []
    count = None
    for ln, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 4 or (len(parts) - 2) % 2 != 0:
            raise DataError(f"{p}:{ln}: malformed manifest line")
        img_path = root / parts[0]
        if not img_path.exists():
            raise DataError(f"{p}:{ln}: referenced image missing: {img_path}")
        label = int(parts[1])
        if label not in (0, 1):
            raise DataError(f"{p}:{ln}: label must be 0 or 1, got {parts[1]}")
        coords = np.array([float(v) for v in parts[2:]], dtype=np.float64).reshape(-1, 2)
        if count is None:
            count = coords.shape[0]
        elif coords.shape[0] != count:
            raise DataError(
                f"{p}:{ln}: landmark count {coords.shape[0]} differs from {count} earlier in file"
            )
        out.append((img_path, label, LandmarkSet(coords)))
    if not out:
        raise DataError(f"{p}: empty manifest")
    return out


def load_manifest_samples(path, dtype=np.float32) -> List[Sample]:
    """Materialize manifest entries as in-memory samples (spec unavailable)."""
    samples = []
    for img_path, label, lm in read_manifest(path):
        image = load_image(img_path, dtype)
        samples.append(Sample(image=image, landmarks=lm, label=label, spec=None))
    return samples


def save_tensor_blob(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if arr.ndim != 4:
        raise DataError(f"tensor blobs are rank-4, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(BLOB_MAGIC)
        fh.write(struct.pack("<II", BLOB_VERSION, 0))
        fh.write(struct.pack("<4I", *arr.shape))
        fh.write(arr.tobytes())


def load_tensor_blob(path) -> np.ndarray:
    p = Path(path)
    raw = p.read_bytes()
    if raw[:4] != BLOB_MAGIC:
        raise DataError(f"{p}: not a tensor blob (bad magic)")
    version, dtype_code = struct.unpack_from("<II", raw, 4)
    if version != BLOB_VERSION:
        raise DataError(f"{p}: unsupported blob version {version}")
    if dtype_code != 0:
        raise DataError(f"{p}: unsupported dtype code {dtype_code}")
    shape = struct.unpack_from("<4I", raw, 12)
    expected = 28 + int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise DataError(f"{p}: truncated blob ({len(raw)} bytes, expected {expected})")
    return np.frombuffer(raw, dtype="<f4", offset=28).reshape(shape).copy()
