"""Procedural synthetic face benchmark with exact landmarks and labels.

Faces are vector shapes (head ellipse, eyes, nose, mouth, optional mustache
band) rendered with a one-pixel anti-aliased falloff, posed by a similarity
transform, and globally tinted. Twelve landmarks ride the same transform, so
geometry supervision is exact by construction. Domain A lacks the attribute,
domain B carries it with a per-sample style.

All template geometry lives in unit coordinates with the face centered at
(0.5, 0.5); pixel (row, col) maps to (col/(size-1), row/(size-1)), matching
the align-corners convention used everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Tuple

import numpy as np

from .errors import ContractError
from .losses import LandmarkSet

# landmark template: (x, y) unit coordinates
#  0 contour left    1 contour right   2 forehead        3 chin
#  4 left eye outer  5 left eye inner  6 right eye inner 7 right eye outer
#  8 nose tip        9 mouth left     10 mouth center   11 mouth right
TEMPLATE_LANDMARKS = np.array(
    [
        (0.18, 0.52),
        (0.82, 0.52),
        (0.50, 0.20),
        (0.50, 0.83),
        (0.30, 0.40),
        (0.42, 0.40),
        (0.58, 0.40),
        (0.70, 0.40),
        (0.50, 0.56),
        (0.38, 0.72),
        (0.50, 0.72),
        (0.62, 0.72),
    ],
    dtype=np.float64,
)

LANDMARK_COUNT = TEMPLATE_LANDMARKS.shape[0]

# index i of the flipped sample takes landmark FLIP_PERMUTATION[i] of the original
FLIP_PERMUTATION = np.array([1, 0, 2, 3, 7, 6, 5, 4, 8, 11, 10, 9])

_CENTER = np.array([0.5, 0.5])
_HEAD_CENTER = np.array([0.5, 0.52])
_HEAD_SEMI = np.array([0.32, 0.36])
_EYE_CENTERS = (np.array([0.36, 0.40]), np.array([0.64, 0.40]))
_EYE_RADIUS = 0.05
_NOSE_CENTER = np.array([0.50, 0.56])
_NOSE_RADIUS = 0.035
_MOUTH_ENDS = (np.array([0.38, 0.72]), np.array([0.62, 0.72]))
_MOUTH_HALF_THICKNESS = 0.016
_BAND_CENTER_Y = 0.645
_BAND_HALF_THICKNESS = 0.022

_BG_COLOR = np.array([0.15, 0.16, 0.19])
_SKIN_COLOR = np.array([0.84, 0.70, 0.58])
_EYE_COLOR = np.array([0.12, 0.10, 0.09])
_NOSE_FACTOR = 0.78
_MOUTH_COLOR = np.array([0.62, 0.26, 0.28])

ROTATION_RANGE = (-0.35, 0.35)
SCALE_RANGE = (0.8, 1.2)
TRANSLATION_RANGE = (-0.1, 0.1)
TINT_RANGE = (0.7, 1.0)
BRIGHTNESS_RANGE = (-0.2, 0.2)
STYLE_HUE_RANGE = (0.0, 1.0)
STYLE_WIDTH_RANGE = (0.08, 0.14)
STYLE_CURVATURE_RANGE = (-0.05, 0.05)


@dataclass(frozen=True)
class FaceSpec:
    """Everything that determines one rendered face."""

    rotation: float
    scale: float
    tx: float
    ty: float
    skin_tint: Tuple[float, float, float]
    brightness: float
    has_attribute: bool
    style_hue: float
    style_width: float
    style_curvature: float

    def validate(self):
        checks = (
            ("rotation", self.rotation, ROTATION_RANGE),
            ("scale", self.scale, SCALE_RANGE),
            ("tx", self.tx, TRANSLATION_RANGE),
            ("ty", self.ty, TRANSLATION_RANGE),
            ("brightness", self.brightness, BRIGHTNESS_RANGE),
            ("style_hue", self.style_hue, STYLE_HUE_RANGE),
            ("style_width", self.style_width, STYLE_WIDTH_RANGE),
            ("style_curvature", self.style_curvature, STYLE_CURVATURE_RANGE),
        )
        for name, value, (lo, hi) in checks:
            if not lo <= value <= hi:
                raise ContractError(f"face spec field {name}={value} outside [{lo}, {hi}]")
        for t in self.skin_tint:
            if not TINT_RANGE[0] <= t <= TINT_RANGE[1]:
                raise ContractError(f"skin tint {self.skin_tint} outside {TINT_RANGE}")


def random_spec(rng: np.random.Generator, has_attribute: bool, tint_range=TINT_RANGE) -> FaceSpec:
    # skin tone varies mostly in overall level, with small per-channel warmth
    base = rng.uniform(tint_range[0], tint_range[1])
    jitter = rng.uniform(-0.03, 0.03, size=3)
    tint = np.clip(base + jitter, tint_range[0], tint_range[1])
    return FaceSpec(
        rotation=float(rng.uniform(*ROTATION_RANGE)),
        scale=float(rng.uniform(*SCALE_RANGE)),
        tx=float(rng.uniform(*TRANSLATION_RANGE)),
        ty=float(rng.uniform(*TRANSLATION_RANGE)),
        skin_tint=tuple(float(v) for v in tint),
        brightness=float(rng.uniform(*BRIGHTNESS_RANGE)),
        has_attribute=bool(has_attribute),
        style_hue=float(rng.uniform(*STYLE_HUE_RANGE)),
        style_width=float(rng.uniform(*STYLE_WIDTH_RANGE)),
        style_curvature=float(rng.uniform(*STYLE_CURVATURE_RANGE)),
    )


@dataclass
class Sample:
    image: np.ndarray  # (3, H, W) float32 in [-1, 1]
    landmarks: LandmarkSet
    label: int
    spec: FaceSpec

    @property
    def size(self) -> int:
        return self.image.shape[1]


def _pose_forward(spec: FaceSpec, points: np.ndarray) -> np.ndarray:
    """Template -> image unit coordinates."""
    c, s = np.cos(spec.rotation), np.sin(spec.rotation)
    rot = np.array([[c, -s], [s, c]])
    return _CENTER + np.array([spec.tx, spec.ty]) + spec.scale * (points - _CENTER) @ rot.T


def _pose_inverse(spec: FaceSpec, points: np.ndarray) -> np.ndarray:
    c, s = np.cos(spec.rotation), np.sin(spec.rotation)
    inv = np.array([[c, s], [-s, c]]) / spec.scale
    return _CENTER + (points - _CENTER - np.array([spec.tx, spec.ty])) @ inv.T


def mustache_color(hue: float) -> np.ndarray:
    # facial-hair shade sweep, black to auburn; unlike skin it is not
    # multiplied by the tint, so the style survives skin-tone changes, and it
    # stays darker than the darkest tinted skin so the band is always visible
    return np.array([0.06 + 0.26 * hue, 0.05 + 0.15 * hue, 0.05 + 0.07 * hue])


def _coverage(signed_dist_px: np.ndarray) -> np.ndarray:
    return np.clip(0.5 - signed_dist_px, 0.0, 1.0)


def _paint(img: np.ndarray, coverage: np.ndarray, color: np.ndarray) -> None:
    img += coverage[None] * (color[:, None, None] - img)


def _band_distance(x: np.ndarray, y: np.ndarray, spec: FaceSpec) -> np.ndarray:
    """Unit-space distance to the mustache band's center curve, minus thickness."""
    dx = np.clip(x - 0.5, -spec.style_width, spec.style_width)
    cy = _BAND_CENTER_Y + spec.style_curvature * (dx / spec.style_width) ** 2
    return np.hypot(x - 0.5 - dx, y - cy) - _BAND_HALF_THICKNESS


def render_face(spec: FaceSpec, size: int) -> Sample:
    """Deterministic render of one face; pure function of (spec, size)."""
    if size < 16:
        raise ContractError(f"render size must be >= 16, got {size}")
    spec.validate()
    grid = np.linspace(0.0, 1.0, size)
    gx, gy = np.meshgrid(grid, grid)  # gx: unit x per (row, col)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    local = _pose_inverse(spec, pts)
    lx = local[:, 0].reshape(size, size)
    ly = local[:, 1].reshape(size, size)
    px_per_unit = spec.scale * (size - 1)

    img = np.tile(_BG_COLOR[:, None, None], (1, size, size)).astype(np.float64)

    # head ellipse (approximate signed distance, exact enough for a 1px edge)
    ex = (lx - _HEAD_CENTER[0]) / _HEAD_SEMI[0]
    ey = (ly - _HEAD_CENTER[1]) / _HEAD_SEMI[1]
    rho = np.sqrt(ex * ex + ey * ey)
    head_sd = (rho - 1.0) * float(min(_HEAD_SEMI))
    _paint(img, _coverage(head_sd * px_per_unit), _SKIN_COLOR)

    for eye in _EYE_CENTERS:
        sd = np.hypot(lx - eye[0], ly - eye[1]) - _EYE_RADIUS
        _paint(img, _coverage(sd * px_per_unit), _EYE_COLOR)

    nose_sd = np.hypot(lx - _NOSE_CENTER[0], ly - _NOSE_CENTER[1]) - _NOSE_RADIUS
    _paint(img, _coverage(nose_sd * px_per_unit), _SKIN_COLOR * _NOSE_FACTOR)

    p0, p1 = _MOUTH_ENDS
    t = np.clip((lx - p0[0]) / (p1[0] - p0[0]), 0.0, 1.0)
    mouth_sd = np.hypot(lx - (p0[0] + t * (p1[0] - p0[0])), ly - p0[1]) - _MOUTH_HALF_THICKNESS
    _paint(img, _coverage(mouth_sd * px_per_unit), _MOUTH_COLOR)

    # skin tint multiplies the base face; the attribute band keeps its own
    # absolute color (hair shade is independent of skin tone); the brightness
    # offset is global
    img *= np.asarray(spec.skin_tint)[:, None, None]
    if spec.has_attribute:
        band_sd = _band_distance(lx, ly, spec)
        _paint(img, _coverage(band_sd * px_per_unit), mustache_color(spec.style_hue))
    img = np.clip(img + spec.brightness, 0.0, 1.0)
    image = (img * 2.0 - 1.0).astype(np.float32)

    lm_px = _pose_forward(spec, TEMPLATE_LANDMARKS) * (size - 1)
    return Sample(image=image, landmarks=LandmarkSet(lm_px), label=int(spec.has_attribute), spec=spec)


def attribute_bbox(spec: FaceSpec, size: int) -> Tuple[float, float, float, float]:
    """Conservative pixel bounds (x0, y0, x1, y1) of the attribute band, AA included."""
    w = spec.style_width + _BAND_HALF_THICKNESS
    bow = abs(spec.style_curvature)
    ys = (_BAND_CENTER_Y - _BAND_HALF_THICKNESS - bow, _BAND_CENTER_Y + _BAND_HALF_THICKNESS + bow)
    corners = np.array([(0.5 + sx * w, yy) for sx in (-1, 1) for yy in ys])
    mapped = _pose_forward(spec, corners) * (size - 1)
    aa = 1.0  # half-pixel falloff plus rounding slack
    return (
        float(mapped[:, 0].min() - aa),
        float(mapped[:, 1].min() - aa),
        float(mapped[:, 0].max() + aa),
        float(mapped[:, 1].max() + aa),
    )


def hflip_augment(sample: Sample) -> Sample:
    """Mirror a sample: image columns, landmark x, and left/right indices.

    Samples whose landmark count matches the synthetic template get the
    documented index permutation; other landmark protocols only mirror the
    coordinates. The face spec, when present, is updated so it still renders
    the mirrored image.
    """
    size = sample.size
    image = np.ascontiguousarray(sample.image[:, :, ::-1])
    pts = sample.landmarks.points
    if pts.shape[0] == LANDMARK_COUNT:
        pts = pts[FLIP_PERMUTATION]
    pts = pts.copy()
    pts[:, 0] = (size - 1) - pts[:, 0]
    spec = sample.spec
    if spec is not None:
        spec = replace(spec, rotation=-spec.rotation, tx=-spec.tx)
    return Sample(image=image, landmarks=LandmarkSet(pts), label=sample.label, spec=spec)


def generate_dataset(
    seed: int, n_per_domain: int, size: int, tint_range=TINT_RANGE
) -> Tuple[List[Sample], List[Sample]]:
    """Unpaired labeled domains: A without the attribute, B with it."""
    if n_per_domain < 1:
        raise ContractError(f"n_per_domain must be >= 1, got {n_per_domain}")
    rng = np.random.default_rng(np.random.PCG64(seed))
    domain_a = [render_face(random_spec(rng, False, tint_range), size) for _ in range(n_per_domain)]
    domain_b = [render_face(random_spec(rng, True, tint_range), size) for _ in range(n_per_domain)]
    return domain_a, domain_b


def split_dataset(samples: List[Sample]) -> dict:
    """80/10/10 train/val/test split by index."""
    n = len(samples)
    a = int(n * 0.8)
    b = int(n * 0.9)
    return {"train": samples[:a], "val": samples[a:b], "test": samples[b:]}
