"""Quantitative evaluation: faithfulness, feature-distribution distance, accuracy.

All image features come from a frozen, seed-determined convolutional embedder
(float32, deterministic kernels), so scores are identical across runs and
machines. Absolute values are not comparable to numbers produced with
pretrained backbones; orderings are what the synthetic benchmark checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff.conv import conv2d_raw
from .autodiff.ops import resize_raw
from .autodiff.optim import Adam
from .autodiff.tensor import Tensor, backward, constant, no_grad
from .config import TrainConfig
from .errors import MetricError
from .losses import LandmarkSet, binary_cross_entropy
from .networks import _Layer
from .numerics import using_dtype
from .synthdata import Sample

EMBEDDER_SEED = 271828


class FixedEmbedder:
    """Frozen random conv features: (3, H, W) image -> unit-free d-vector.

    Three stride-2 3x3 layers with leaky-relu, global average pool. Weights
    are drawn once from a documented seed and never trained.
    """

    def __init__(self, dim: int = 64, seed: int = EMBEDDER_SEED, input_size: int = 32):
        if dim % 4:
            raise MetricError(f"embedder dim must be divisible by 4, got {dim}")
        self.dim = dim
        self.input_size = input_size
        rng = np.random.default_rng(np.random.PCG64(seed))
        widths = [3, dim // 4, dim // 2, dim]
        self.layers = []
        for i in range(3):
            fan_in = widths[i] * 9
            w = rng.uniform(-np.sqrt(1.0 / fan_in), np.sqrt(1.0 / fan_in), size=(widths[i + 1], widths[i], 3, 3))
            self.layers.append(w.astype(np.float32))

    def embed(self, images) -> np.ndarray:
        """(N, 3, H, W) array or list of (3, H, W) arrays -> (N, dim) float64."""
        if isinstance(images, (list, tuple)):
            images = np.stack(images)
        x = np.asarray(images, dtype=np.float32)
        if x.ndim == 3:
            x = x[None]
        feats = []
        for start in range(0, x.shape[0], 256):
            h = resize_raw(x[start : start + 256], self.input_size, self.input_size)
            for w in self.layers:
                h = conv2d_raw(h, w, None, stride=2, pad=1)
                h = np.where(h > 0, h, np.float32(0.2) * h)
            feats.append(h.mean(axis=(2, 3)))
        return np.concatenate(feats).astype(np.float64)


@dataclass(frozen=True)
class CropRule:
    """Landmark indices spanning the attribute plus the margin definition."""

    indices: Tuple[int, ...]
    eyes_left: Tuple[int, ...]
    eyes_right: Tuple[int, ...]
    margin: float = 0.15  # fraction of the inter-ocular distance, all sides


ATTRIBUTE_CROPS: Dict[str, CropRule] = {
    # synthetic 12-point protocol: nose tip + mouth corners/center
    "mustache": CropRule(indices=(8, 9, 10, 11), eyes_left=(4, 5), eyes_right=(6, 7)),
    # 68-point protocol (iBUG ordering): nose base + upper lip
    "mustache68": CropRule(
        indices=tuple(range(31, 36)) + tuple(range(48, 55)),
        eyes_left=tuple(range(36, 42)),
        eyes_right=tuple(range(42, 48)),
    ),
}

CROP_SIZE = 24


def _bilinear_gather(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample (3, H, W) at fractional (xs, ys) grids with border clamping."""
    _, h, w = image.shape
    xs = np.clip(xs, 0.0, w - 1)
    ys = np.clip(ys, 0.0, h - 1)
    x0 = np.minimum(np.floor(xs).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[None]
    fy = (ys - y0)[None]
    v00, v01 = image[:, y0, x0], image[:, y0, x1]
    v10, v11 = image[:, y1, x0], image[:, y1, x1]
    return (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11)


def attribute_crop(image: np.ndarray, landmarks: LandmarkSet, attribute: str, crop_size: int = CROP_SIZE) -> np.ndarray:
    """Pose-aligned crop around the attribute landmarks, photometrically normalized.

    The crop box is oriented along the eye line (so head rotation does not
    leak into the comparison), spans the rule's landmarks plus a margin of
    0.15 inter-ocular distances, is resampled to a fixed square, and is
    normalized to zero mean / unit deviation jointly over channels (so global
    tint and lighting do not leak in either).
    """
    if attribute not in ATTRIBUTE_CROPS:
        raise MetricError(f"no crop rule for attribute {attribute!r}; known: {sorted(ATTRIBUTE_CROPS)}")
    rule = ATTRIBUTE_CROPS[attribute]
    pts = landmarks.points
    needed = max(max(rule.indices), max(rule.eyes_left), max(rule.eyes_right))
    if pts.shape[0] <= needed:
        raise MetricError(f"crop rule for {attribute!r} needs {needed + 1} landmarks, got {pts.shape[0]}")
    eye_l = pts[list(rule.eyes_left)].mean(axis=0)
    eye_r = pts[list(rule.eyes_right)].mean(axis=0)
    iod = float(np.linalg.norm(eye_r - eye_l))
    if iod <= 0:
        raise MetricError("degenerate eye landmarks (zero inter-ocular distance)")
    u = (eye_r - eye_l) / iod
    v = np.array([-u[1], u[0]])
    box = pts[list(rule.indices)]
    center = 0.5 * (box.min(axis=0) + box.max(axis=0))
    rel = box - center
    margin = rule.margin * iod
    half_u = float(np.abs(rel @ u).max()) + margin
    half_v = float(np.abs(rel @ v).max()) + margin
    if half_u < 1.0 or half_v < 1.0:
        raise MetricError(f"degenerate attribute crop (extent {half_u:.2f}x{half_v:.2f} px)")
    lin = np.linspace(-1.0, 1.0, crop_size)
    gu, gv = np.meshgrid(lin, lin)  # gu varies along the eye line
    xs = center[0] + gu * half_u * u[0] + gv * half_v * v[0]
    ys = center[1] + gu * half_u * u[1] + gv * half_v * v[1]
    crop = _bilinear_gather(np.asarray(image, dtype=np.float64), xs, ys)
    crop = crop - crop.mean()
    return (crop / max(crop.std(), 1e-6)).astype(np.float32)


def faithfulness_score(
    result: np.ndarray,
    source: np.ndarray,
    lm_result: LandmarkSet,
    lm_source: LandmarkSet,
    attribute: str = "mustache",
    embedder: Optional[FixedEmbedder] = None,
) -> float:
    """Distance in [0, 2] between unit-normalized embeddings of the two crops."""
    embedder = embedder or FixedEmbedder()
    crop_r = attribute_crop(result, lm_result, attribute)
    crop_s = attribute_crop(source, lm_source, attribute)
    f = embedder.embed(np.stack([crop_r, crop_s]))
    norms = np.linalg.norm(f, axis=1)
    if (norms == 0).any():
        raise MetricError("zero-norm embedding; cannot normalize for faithfulness")
    f = f / norms[:, None]
    return float(np.linalg.norm(f[0] - f[1]))


def frechet_from_features(fx: np.ndarray, fy: np.ndarray, regularizer: float = 1e-6) -> float:
    """Squared Frechet distance between Gaussian fits of two feature sets.

    The covariance square root is taken by symmetric eigendecomposition of
    sqrt(Sx) Sy sqrt(Sx); eigenvalues below zero (numerical noise) clip to
    zero. ``regularizer`` * I is added to each covariance because small sets
    give singular estimates.
    """
    fx = np.asarray(fx, dtype=np.float64)
    fy = np.asarray(fy, dtype=np.float64)
    if fx.ndim != 2 or fy.ndim != 2 or fx.shape[1] != fy.shape[1]:
        raise MetricError(f"feature sets must be (n, d) with equal d, got {fx.shape} and {fy.shape}")
    if fx.shape[0] < 2 or fy.shape[0] < 2:
        raise MetricError(f"feature sets too small for covariance: {fx.shape[0]} and {fy.shape[0]}")
    d = fx.shape[1]
    mu_x, mu_y = fx.mean(axis=0), fy.mean(axis=0)
    cov_x = np.cov(fx, rowvar=False) + regularizer * np.eye(d)
    cov_y = np.cov(fy, rowvar=False) + regularizer * np.eye(d)

    ex, vx = np.linalg.eigh(cov_x)
    root_x = (vx * np.sqrt(np.clip(ex, 0.0, None))) @ vx.T
    inner = root_x @ cov_y @ root_x
    ei = np.linalg.eigh((inner + inner.T) * 0.5)[0]
    trace_sqrt = np.sqrt(np.clip(ei, 0.0, None)).sum()
    diff = mu_x - mu_y
    return float(diff @ diff + np.trace(cov_x) + np.trace(cov_y) - 2.0 * trace_sqrt)


def frechet_distance(images_x, images_y, embedder: Optional[FixedEmbedder] = None) -> float:
    embedder = embedder or FixedEmbedder()
    return frechet_from_features(embedder.embed(images_x), embedder.embed(images_y))


class AttributeClassifier:
    """Small frozen-size conv net with one logit output."""

    def __init__(self, seed: int = 0, width: int = 16, input_size: int = 32):
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.input_size = input_size
        self.layers = [
            _Layer(rng, "c0", 3, width, 3, 2, 1),
            _Layer(rng, "c1", width, 2 * width, 3, 2, 1),
            _Layer(rng, "c2", 2 * width, 4 * width, 3, 2, 1),
        ]
        self.head = _Layer(rng, "head", 4 * width, 1, 3, 1, 1)

    def forward(self, images: Tensor) -> Tensor:
        from .autodiff.ops import leaky_relu

        h = images
        for layer in self.layers:
            h = leaky_relu(layer(h), 0.2)
        return self.head(h).mean(axes=(2, 3))

    def parameters(self):
        out = []
        for layer in self.layers:
            out += layer.parameters()
        return out + self.head.parameters()

    def logits(self, images: np.ndarray) -> np.ndarray:
        """(N, 3, H, W) -> (N,) logits, resized to the training resolution."""
        x = np.asarray(images, dtype=np.float32)
        if x.ndim == 3:
            x = x[None]
        out = []
        with no_grad(), using_dtype(np.float32):
            for start in range(0, x.shape[0], 256):
                h = resize_raw(x[start : start + 256], self.input_size, self.input_size)
                out.append(self.forward(constant(h)).data.reshape(-1))
        return np.concatenate(out)

    def predict(self, images: np.ndarray) -> np.ndarray:
        return (self.logits(images) > 0).astype(np.int64)


def classify_accuracy(classifier: AttributeClassifier, images, labels) -> float:
    preds = classifier.predict(np.stack(images) if isinstance(images, (list, tuple)) else images)
    labels = np.asarray(labels)
    return float((preds == labels).mean())


def train_attribute_classifier(
    train_samples: Sequence[Sample],
    val_samples: Sequence[Sample],
    *,
    steps: int = 800,
    batch_size: int = 32,
    lr: float = 0.002,
    seed: int = 0,
    min_val_accuracy: float = 0.95,
) -> AttributeClassifier:
    """Train the qualification classifier; refuse to return one below the bar.

    Horizontal-flip augmentation doubles the effective training set, which
    closes the generalization gap on small benchmarks.
    """
    from .synthdata import hflip_augment

    clf = AttributeClassifier(seed=seed)
    rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence([seed, 99])))
    train_samples = list(train_samples) + [hflip_augment(s) for s in train_samples]
    images = np.stack([s.image for s in train_samples]).astype(np.float32)
    labels = np.array([s.label for s in train_samples])
    batch_size = min(batch_size, len(train_samples))
    with using_dtype(np.float32):
        images_rs = resize_raw(images, clf.input_size, clf.input_size)
        opt = Adam(clf.parameters(), lr=lr, beta1=0.9, beta2=0.999)
        for _ in range(steps):
            idx = rng.choice(len(train_samples), size=batch_size, replace=False)
            logit = clf.forward(constant(images_rs[idx]))
            loss = binary_cross_entropy(logit, labels[idx])
            opt.zero_grad()
            backward(loss)
            opt.step()
    val_images = np.stack([s.image for s in val_samples])
    val_labels = [s.label for s in val_samples]
    acc = classify_accuracy(clf, val_images, val_labels)
    if acc < min_val_accuracy:
        raise MetricError(
            f"attribute classifier reached only {acc:.3f} validation accuracy "
            f"(qualification bar {min_val_accuracy}); refusing to evaluate with it"
        )
    clf.validation_accuracy = acc
    return clf


def generate_transfers(transfer_module, pairs: Sequence[Tuple[Sample, Sample]], batch_size: int = 16):
    """Run the transfer forward over (target, source) pairs; returns results array."""
    from .training import make_batch

    outs = []
    with no_grad(), using_dtype(np.float32):
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start : start + batch_size]
            t_img, _ = make_batch([p[0] for p in chunk])
            s_img, _ = make_batch([p[1] for p in chunk])
            out = transfer_module.forward(t_img, s_img)
            outs.append(np.clip(out.result.data, -1.0, 1.0))
    return np.concatenate(outs)


def make_eval_pairs(
    targets: Sequence[Sample],
    sources: Sequence[Sample],
    n_pairs: int,
    rng: np.random.Generator,
    min_tint_gap: float = 0.0,
) -> List[Tuple[Sample, Sample]]:
    """Random target/source pairs, optionally constrained to a tint gap."""
    pairs = []
    attempts = 0
    while len(pairs) < n_pairs:
        attempts += 1
        if attempts > n_pairs * 200:
            raise MetricError(
                f"could not draw {n_pairs} pairs with tint gap >= {min_tint_gap}"
            )
        t = targets[int(rng.integers(len(targets)))]
        s = sources[int(rng.integers(len(sources)))]
        if min_tint_gap > 0.0:
            if t.spec is None or s.spec is None:
                raise MetricError("tint-gap pairing needs samples with face specs")
            gap = abs(float(np.mean(t.spec.skin_tint)) - float(np.mean(s.spec.skin_tint)))
            if gap < min_tint_gap:
                continue
        pairs.append((t, s))
    return pairs


@dataclass
class VariantMetrics:
    variant: str
    seed: int
    fid_like: float
    faithfulness: float
    accuracy: float
    accuracy_shifted: float
    faithfulness_shifted: float


@dataclass
class AblationReport:
    rows: List[VariantMetrics] = field(default_factory=list)

    def by_variant(self, key: str) -> Dict[str, np.ndarray]:
        out = {}
        for row in self.rows:
            out.setdefault(row.variant, []).append(getattr(row, key))
        return {v: np.array(vals) for v, vals in out.items()}

    def summary(self) -> List[dict]:
        table = []
        for variant in dict.fromkeys(r.variant for r in self.rows):
            entry = {"variant": variant}
            for key in ("fid_like", "faithfulness", "accuracy", "accuracy_shifted", "faithfulness_shifted"):
                vals = self.by_variant(key)[variant]
                entry[key] = float(vals.mean())
                entry[key + "_std"] = float(vals.std())
            table.append(entry)
        return table


VARIANTS = ("full", "no_flow", "no_refine")


def evaluate_transfer_model(
    transfer_module,
    val_a: Sequence[Sample],
    val_b: Sequence[Sample],
    classifier: AttributeClassifier,
    embedder: FixedEmbedder,
    *,
    n_pairs: int = 100,
    tint_gap: float = 0.2,
    attribute: str = "mustache",
    rng: Optional[np.random.Generator] = None,
) -> dict:
    """FID-like, faithfulness, and classifier accuracy on random and tint-gap pairs.

    The tint-gap ("shifted") metrics need samples with face specs; pass
    ``tint_gap=None`` for datasets loaded from disk, where specs are absent.
    """
    rng = rng if rng is not None else np.random.default_rng(np.random.PCG64(123))
    groups = [("", make_eval_pairs(val_a, val_b, n_pairs, rng))]
    if tint_gap is not None:
        groups.append(("_shifted", make_eval_pairs(val_a, val_b, n_pairs, rng, min_tint_gap=tint_gap)))
    results = {}
    for tag, pairs in groups:
        transferred = generate_transfers(transfer_module, pairs)
        faith = [
            faithfulness_score(transferred[i], pairs[i][1].image, pairs[i][0].landmarks, pairs[i][1].landmarks, attribute, embedder)
            for i in range(len(pairs))
        ]
        results["faithfulness" + tag] = float(np.mean(faith))
        results["accuracy" + tag] = float((classifier.predict(transferred) == 1).mean())
        if tag == "":
            real_b = np.stack([s.image for s in val_b])
            results["fid_like"] = frechet_from_features(embedder.embed(transferred), embedder.embed(real_b))
    return results


@dataclass
class AblationConfig:
    """One benchmark definition shared by every variant and seed."""

    train: TrainConfig
    n_per_domain: int = 400
    data_seed: int = 500
    seeds: Tuple[int, ...] = (0, 1, 2)
    variants: Tuple[str, ...] = VARIANTS
    n_pairs: int = 80
    tint_gap: float = 0.2
    attribute: str = "mustache"
    classifier_steps: int = 500


def run_ablation(config: AblationConfig, progress=None) -> AblationReport:
    """Train and score every (seed, variant) pair on a shared benchmark.

    Variants: ``full`` trains everything; ``no_flow`` pins the displacement
    field to zero (mask and refinement still learn); ``no_refine`` pins the
    appearance residual to zero. Dataset, classifier, and evaluation pairs are
    shared across the variants of a seed so differences are attributable to
    the variant alone.
    """
    import copy

    from .synthdata import generate_dataset, split_dataset
    from .training import init_state, train_step, _augment

    report = AblationReport()
    embedder = FixedEmbedder()
    for seed in config.seeds:
        domain_a, domain_b = generate_dataset(config.data_seed + seed, config.n_per_domain, config.train.image_size)
        split_a, split_b = split_dataset(domain_a), split_dataset(domain_b)
        classifier = train_attribute_classifier(
            split_a["train"] + split_b["train"],
            split_a["val"] + split_b["val"],
            steps=config.classifier_steps,
            seed=seed,
        )
        for variant in config.variants:
            if variant not in VARIANTS:
                raise MetricError(f"unknown ablation variant {variant!r}; known: {VARIANTS}")
            with using_dtype(np.float32):
                train_cfg = copy.deepcopy(config.train)
                train_cfg.seed = seed
                state = init_state(
                    train_cfg,
                    len(split_a["train"]),
                    len(split_b["train"]),
                    use_flow=variant != "no_flow",
                    use_refine=variant != "no_refine",
                )
                while state.step < train_cfg.total_steps:
                    idx_a = state.sampler_a.draw(train_cfg.batch_size)
                    idx_b = state.sampler_b.draw(train_cfg.batch_size)
                    batch_a = _augment(state.rng, [split_a["train"][i] for i in idx_a])
                    batch_b = _augment(state.rng, [split_b["train"][i] for i in idx_b])
                    terms = train_step(state, batch_a, batch_b)
                    if variant == "no_flow" and terms["flow_linf"] != 0.0:
                        raise MetricError("no_flow variant produced nonzero flow")
                    if progress is not None:
                        progress(seed, variant, state.step, terms)
            scores = evaluate_transfer_model(
                state.transfer,
                split_a["val"] + split_a["test"],
                split_b["val"] + split_b["test"],
                classifier,
                embedder,
                n_pairs=config.n_pairs,
                tint_gap=config.tint_gap,
                attribute=config.attribute,
                rng=np.random.default_rng(np.random.PCG64(np.random.SeedSequence([config.data_seed, seed]))),
            )
            report.rows.append(
                VariantMetrics(
                    variant=variant,
                    seed=seed,
                    fid_like=scores["fid_like"],
                    faithfulness=scores["faithfulness"],
                    accuracy=scores["accuracy"],
                    accuracy_shifted=scores["accuracy_shifted"],
                    faithfulness_shifted=scores["faithfulness_shifted"],
                )
            )
    return report
