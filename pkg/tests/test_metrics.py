import numpy as np
import pytest
from dataclasses import replace

from faceflow.errors import MetricError
from faceflow.metrics import (
    FixedEmbedder,
    attribute_crop,
    classify_accuracy,
    faithfulness_score,
    frechet_distance,
    frechet_from_features,
    make_eval_pairs,
    train_attribute_classifier,
)
from faceflow.synthdata import generate_dataset, random_spec, render_face, split_dataset


@pytest.fixture(scope="module")
def embedder():
    return FixedEmbedder()


@pytest.fixture(scope="module")
def dataset():
    domain_a, domain_b = generate_dataset(5, 300, 64)
    return split_dataset(domain_a), split_dataset(domain_b)


@pytest.fixture(scope="module")
def classifier(dataset):
    split_a, split_b = dataset
    return train_attribute_classifier(
        split_a["train"] + split_b["train"], split_a["val"] + split_b["val"], steps=900, seed=0
    )


class TestEmbedder:
    def test_deterministic_across_instances(self, embedder, rng):
        images = rng.uniform(-1, 1, size=(6, 3, 64, 64)).astype(np.float32)
        assert np.array_equal(embedder.embed(images), FixedEmbedder().embed(images))

    def test_shape_and_dtype(self, embedder, rng):
        feats = embedder.embed(rng.uniform(-1, 1, size=(4, 3, 32, 32)).astype(np.float32))
        assert feats.shape == (4, 64)
        assert feats.dtype == np.float64


class TestFrechet:
    def test_self_distance_zero(self, embedder, rng):
        feats = rng.normal(size=(120, 64))
        assert frechet_from_features(feats, feats) <= 1e-6

    def test_known_mean_shift(self):
        gen = np.random.default_rng(42)
        fx = gen.normal(size=(4000, 16))
        fy = gen.normal(size=(4000, 16))
        fy[:, 0] += 3.0
        assert frechet_from_features(fx, fy) == pytest.approx(9.0, rel=0.05)

    def test_symmetry(self, rng):
        fx = rng.normal(size=(200, 8))
        fy = rng.normal(size=(180, 8)) * 1.3 + 0.2
        assert abs(frechet_from_features(fx, fy) - frechet_from_features(fy, fx)) <= 1e-9

    def test_noise_monotonicity(self, embedder):
        domain_a, domain_b = generate_dataset(17, 500, 64)
        base = np.stack([s.image for s in domain_b])
        ref = embedder.embed(base)
        gen = np.random.default_rng(7)
        values = []
        for sigma in (0.05, 0.1, 0.2):
            noisy = np.clip(base + gen.normal(0, sigma, base.shape).astype(np.float32), -1, 1)
            values.append(frechet_from_features(ref, embedder.embed(noisy)))
        assert values[0] < values[1] < values[2]

    def test_too_small_set_rejected(self, rng):
        with pytest.raises(MetricError):
            frechet_from_features(rng.normal(size=(1, 8)), rng.normal(size=(50, 8)))

    def test_image_level_wrapper(self, embedder, dataset):
        split_a, _ = dataset
        imgs = [s.image for s in split_a["val"]]
        assert frechet_distance(imgs, imgs, embedder) <= 1e-6


class TestFaithfulness:
    def test_identical_crops_zero(self, embedder, dataset):
        _, split_b = dataset
        s = split_b["val"][0]
        assert faithfulness_score(s.image, s.image, s.landmarks, s.landmarks, embedder=embedder) == 0.0

    def test_range_bound(self, embedder, dataset, rng):
        _, split_b = dataset
        for _ in range(20):
            s1 = split_b["val"][rng.integers(len(split_b["val"]))]
            s2 = split_b["train"][rng.integers(len(split_b["train"]))]
            val = faithfulness_score(s1.image, s2.image, s1.landmarks, s2.landmarks, embedder=embedder)
            assert 0.0 <= val <= 2.0

    def test_invariant_outside_both_crops(self, embedder, dataset):
        _, split_b = dataset
        s1, s2 = split_b["val"][0], split_b["val"][1]
        base = faithfulness_score(s1.image, s2.image, s1.landmarks, s2.landmarks, embedder=embedder)
        vandalized = s1.image.copy()
        vandalized[:, :6, :6] = 1.0  # far corner, outside any mustache crop
        after = faithfulness_score(vandalized, s2.image, s1.landmarks, s2.landmarks, embedder=embedder)
        assert after == pytest.approx(base, abs=1e-12)

    def test_matched_styles_closer_than_mismatched(self, embedder):
        gen = np.random.default_rng(11)
        matched, mismatched = [], []
        for _ in range(200):
            spec = random_spec(gen, True)
            twin_pose = random_spec(gen, True)
            twin = replace(
                twin_pose,
                style_hue=spec.style_hue,
                style_width=spec.style_width,
                style_curvature=spec.style_curvature,
            )
            other = random_spec(gen, True)
            s, st, so = render_face(spec, 64), render_face(twin, 64), render_face(other, 64)
            matched.append(faithfulness_score(s.image, st.image, s.landmarks, st.landmarks, embedder=embedder))
            mismatched.append(faithfulness_score(s.image, so.image, s.landmarks, so.landmarks, embedder=embedder))
        assert np.mean(matched) < np.mean(mismatched)

    def test_unknown_attribute(self, dataset, embedder):
        _, split_b = dataset
        s = split_b["val"][0]
        with pytest.raises(MetricError):
            faithfulness_score(s.image, s.image, s.landmarks, s.landmarks, attribute="unibrow", embedder=embedder)

    def test_crop_needs_enough_landmarks(self, dataset):
        _, split_b = dataset
        s = split_b["val"][0]
        from faceflow.losses import LandmarkSet

        with pytest.raises(MetricError):
            attribute_crop(s.image, LandmarkSet(s.landmarks.points[:4]), "mustache")


class TestClassifier:
    def test_ground_truth_accuracy(self, classifier, dataset):
        split_a, split_b = dataset
        images_b = np.stack([s.image for s in split_b["test"]])
        assert classify_accuracy(classifier, images_b, [1] * len(split_b["test"])) >= 0.99

    def test_label_flip_complement(self, classifier, dataset):
        _, split_b = dataset
        images_b = np.stack([s.image for s in split_b["test"]])
        assert classify_accuracy(classifier, images_b, [0] * len(split_b["test"])) <= 0.01

    def test_untrained_blend_baseline_between(self, classifier, dataset):
        split_a, split_b = dataset
        pairs = make_eval_pairs(split_a["test"], split_b["test"], 60, np.random.default_rng(3))
        blends = np.stack([0.5 * t.image + 0.5 * s.image for t, s in pairs])
        baseline = float((classifier.predict(blends) == 1).mean())
        images_b = np.stack([s.image for s in split_b["test"]])
        gt = classify_accuracy(classifier, images_b, [1] * len(split_b["test"]))
        flipped = classify_accuracy(classifier, images_b, [0] * len(split_b["test"]))
        assert flipped < baseline < gt

    def test_below_bar_refused(self, dataset):
        split_a, split_b = dataset
        with pytest.raises(MetricError, match="refusing"):
            train_attribute_classifier(
                split_a["train"][:8] + split_b["train"][:8],
                split_a["val"] + split_b["val"],
                steps=1,
                seed=0,
            )


def test_make_eval_pairs_tint_gap(dataset):
    split_a, split_b = dataset
    pairs = make_eval_pairs(split_a["val"], split_b["val"], 20, np.random.default_rng(0), min_tint_gap=0.2)
    for t, s in pairs:
        gap = abs(float(np.mean(t.spec.skin_tint)) - float(np.mean(s.spec.skin_tint)))
        assert gap >= 0.2
