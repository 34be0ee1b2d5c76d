import numpy as np
import pytest
from dataclasses import replace

from faceflow.errors import ContractError
from faceflow.synthdata import (
    FLIP_PERMUTATION,
    LANDMARK_COUNT,
    TEMPLATE_LANDMARKS,
    FaceSpec,
    attribute_bbox,
    generate_dataset,
    hflip_augment,
    mustache_color,
    random_spec,
    render_face,
    split_dataset,
)

IDENTITY = FaceSpec(0.0, 1.0, 0.0, 0.0, (1.0, 1.0, 1.0), 0.0, False, 0.5, 0.1, 0.0)


def test_identity_pose_landmarks_equal_template():
    sample = render_face(IDENTITY, 64)
    assert np.allclose(sample.landmarks.points, TEMPLATE_LANDMARKS * 63, atol=1e-12)


def test_render_is_pure_function(rng):
    spec = random_spec(rng, True)
    s1 = render_face(spec, 64)
    s2 = render_face(spec, 64)
    assert np.array_equal(s1.image, s2.image)
    assert np.array_equal(s1.landmarks.points, s2.landmarks.points)


def test_render_size_floor():
    with pytest.raises(ContractError):
        render_face(IDENTITY, 8)


def test_image_range_and_dtype(rng):
    s = render_face(random_spec(rng, True), 64)
    assert s.image.dtype == np.float32
    assert s.image.min() >= -1.0 and s.image.max() <= 1.0


def test_landmarks_in_bounds_over_pose_extremes(rng):
    for _ in range(50):
        s = render_face(random_spec(rng, bool(rng.integers(2))), 48)
        assert (s.landmarks.points >= 0).all()
        assert (s.landmarks.points <= 47).all()


def test_attribute_locality(rng):
    for _ in range(5):
        spec = random_spec(rng, True)
        with_attr = render_face(spec, 64).image
        without = render_face(replace(spec, has_attribute=False), 64).image
        diff = np.abs(with_attr - without).max(axis=0)
        ys, xs = np.nonzero(diff > 0)
        x0, y0, x1, y1 = attribute_bbox(spec, 64)
        assert ((xs >= x0 - 1) & (xs <= x1 + 1)).all()
        assert ((ys >= y0 - 1) & (ys <= y1 + 1)).all()


def test_nose_landmark_inside_nose_region(rng):
    for _ in range(5):
        spec = random_spec(rng, False)
        s = render_face(spec, 64)
        x, y = s.landmarks.points[8]
        color = (s.image[:, int(round(y)), int(round(x))] + 1.0) / 2.0
        skin = np.array([0.84, 0.70, 0.58])
        expected = np.clip(skin * 0.78 * np.asarray(spec.skin_tint) + spec.brightness, 0, 1)
        assert np.abs(color - expected).max() < 5e-3


def test_label_matches_attribute(rng):
    assert render_face(random_spec(rng, True), 32).label == 1
    assert render_face(random_spec(rng, False), 32).label == 0


def test_spec_validation():
    with pytest.raises(ContractError):
        render_face(replace(IDENTITY, rotation=1.0), 32)
    with pytest.raises(ContractError):
        render_face(replace(IDENTITY, skin_tint=(0.5, 0.8, 0.8)), 32)


class TestHflip:
    def test_involution(self, rng):
        s = render_face(random_spec(rng, True), 64)
        back = hflip_augment(hflip_augment(s))
        assert np.array_equal(back.image, s.image)
        assert np.abs(back.landmarks.points - s.landmarks.points).max() < 1e-12
        assert back.spec == s.spec
        assert back.label == s.label

    def test_centered_face_invariant_under_flip(self):
        s = render_face(IDENTITY, 64)
        flipped = hflip_augment(s)
        assert np.abs(flipped.landmarks.points - s.landmarks.points).max() < 1e-12

    def test_permutation_is_self_inverse(self):
        assert np.array_equal(FLIP_PERMUTATION[FLIP_PERMUTATION], np.arange(LANDMARK_COUNT))

    def test_attribute_centroid_maps(self, rng):
        spec = random_spec(rng, True)
        plain = render_face(spec, 64)
        off = render_face(replace(spec, has_attribute=False), 64)
        weight = np.abs(plain.image - off.image).sum(axis=0)
        cx = (weight * np.arange(64)[None, :]).sum() / weight.sum()
        fplain, foff = hflip_augment(plain), hflip_augment(off)
        fweight = np.abs(fplain.image - foff.image).sum(axis=0)
        fcx = (fweight * np.arange(64)[None, :]).sum() / fweight.sum()
        assert abs(fcx - (63 - cx)) <= 0.5

    def test_flipped_spec_renders_the_flipped_image(self, rng):
        """The pose metadata stays truthful after augmentation."""
        s = render_face(random_spec(rng, True), 64)
        f = hflip_augment(s)
        rerendered = render_face(f.spec, 64)
        assert np.abs(rerendered.image - f.image).max() <= 1e-6


class TestDataset:
    def test_deterministic(self):
        a1, b1 = generate_dataset(11, 20, 32)
        a2, b2 = generate_dataset(11, 20, 32)
        for s1, s2 in zip(a1 + b1, a2 + b2):
            assert np.array_equal(s1.image, s2.image)

    def test_label_purity(self):
        a, b = generate_dataset(3, 15, 32)
        assert all(s.label == 0 and not s.spec.has_attribute for s in a)
        assert all(s.label == 1 and s.spec.has_attribute for s in b)

    def test_rotation_mean_near_zero(self):
        a, b = generate_dataset(7, 1000, 16)
        rotations = [s.spec.rotation for s in a + b]
        assert abs(np.mean(rotations)) <= 0.02

    def test_split_fractions(self):
        a, _ = generate_dataset(0, 40, 16)
        split = split_dataset(a)
        assert len(split["train"]) == 32
        assert len(split["val"]) == 4
        assert len(split["test"]) == 4
        assert split["train"][0] is a[0] and split["test"][-1] is a[-1]

    def test_minimum_count(self):
        with pytest.raises(ContractError):
            generate_dataset(0, 0, 32)


def test_mustache_color_is_darker_than_darkest_skin():
    # band must stay visible for every (hue, tint, brightness) combination
    darkest_skin = np.array([0.84, 0.70, 0.58]) * 0.7
    assert (mustache_color(1.0) < darkest_skin - 0.05).all()
