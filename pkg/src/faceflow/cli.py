"""Command-line surface: synth-gen, train, transfer, remove, eval, gradcheck.

Exit codes: 0 success, 1 usage or configuration problems (bad flags, bad
config file, missing inputs), 2 runtime or numerical failures (corrupt
checkpoints, contract violations, non-finite losses, gradient-check failure).

Image+landmark inputs accept either an image path (landmarks from an explicit
file or the ``<image>.lm.txt`` sidecar) or ``manifest.txt#INDEX`` to pull the
INDEX-th entry of a manifest.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import dataio, reporting
from .config import AppConfig, TrainConfig, apply_overrides, echo_config, load_config_file
from .errors import ConfigError, DataError, FaceflowError, MetricError
from .losses import LandmarkSet
from .metrics import (
    AblationConfig,
    FixedEmbedder,
    evaluate_transfer_model,
    frechet_distance,
    run_ablation,
    train_attribute_classifier,
)
from .numerics import set_default_dtype
from .synthdata import generate_dataset, split_dataset
from .training import load_state, read_train_log, train_loop, validation_cycle_l1
from .verification import standard_battery
from .warpblend import apply_transfer, clamp_for_output


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="faceflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("synth-gen", help="render the synthetic face dataset to PNGs + manifests")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-per-domain", type=int, default=2000)
    g.add_argument("--size", type=int, default=64)

    t = sub.add_parser("train", help="run the cycle-consistency training loop")
    t.add_argument("--config", help="INI config file; flags override its keys")
    t.add_argument("--data", dest="data_root", help="dataset directory from synth-gen")
    t.add_argument("--out", dest="out_dir")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--steps", dest="train.total_steps", type=int)
    t.add_argument("--image-size", dest="train.image_size", type=int)
    t.add_argument("--batch-size", dest="train.batch_size", type=int)
    t.add_argument("--lr", dest="train.learning_rate", type=float)
    t.add_argument("--seed", dest="train.seed", type=int)
    t.add_argument("--base-width", dest="model.base_width", type=int)
    t.add_argument("--alpha", dest="model.alpha", type=float)
    t.add_argument("--eval-interval", dest="train.eval_interval", type=int)
    t.add_argument("--checkpoint-interval", dest="train.checkpoint_interval", type=int)
    t.add_argument("--deterministic", dest="train.deterministic", choices=("true", "false"))
    for key in ("w_adv_g", "w_adv_f", "w_cls_r", "w_cls_f", "w_rec", "w_lm", "w_tv"):
        t.add_argument(f"--{key.replace('_', '-')}", dest=f"loss.{key}", type=float)

    x = sub.add_parser("transfer", help="apply an attribute from a source face to a target face")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--target", required=True, help="image path or manifest.txt#INDEX")
    x.add_argument("--source", required=True, help="image path or manifest.txt#INDEX")
    x.add_argument("--target-landmarks")
    x.add_argument("--source-landmarks")
    x.add_argument("--out", required=True)
    x.add_argument("--hires-target", help="full-resolution target image")
    x.add_argument("--hires-source", help="full-resolution source image")
    x.add_argument("--save-intermediates", action="store_true")

    r = sub.add_parser("remove", help="remove the attribute from one image")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--input", required=True, help="image path or manifest.txt#INDEX")
    r.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="metric report (and optional ablation) for a checkpoint")
    e.add_argument("--data", required=True, help="dataset directory from synth-gen")
    e.add_argument("--checkpoint")
    e.add_argument("--out", required=True)
    e.add_argument("--pairs", type=int, default=100)
    e.add_argument("--ablation", action="store_true", help="train and compare full/no_flow/no_refine")
    e.add_argument("--ablation-steps", type=int, default=600)
    e.add_argument("--ablation-size", type=int, default=32)
    e.add_argument("--ablation-images", type=int, default=400)
    e.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])

    c = sub.add_parser("gradcheck", help="float64 finite-difference verification battery")
    c.add_argument("--size", type=int, default=16)
    c.add_argument("--width", type=int, default=4)
    c.add_argument("--samples", type=int, default=6)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def _load_image_landmarks(spec: str, landmarks_path=None):
    if "#" in spec and not Path(spec).exists():
        manifest_path, _, index = spec.rpartition("#")
        entries = dataio.read_manifest(manifest_path)
        try:
            img_path, _, lm = entries[int(index)]
        except (IndexError, ValueError) as exc:
            raise DataError(f"bad manifest index in {spec!r}: {exc}") from exc
        return dataio.load_image(img_path), lm
    image = dataio.load_image(spec)
    if landmarks_path is None:
        landmarks_path = Path(spec).with_suffix(Path(spec).suffix + ".lm.txt")
        if not Path(landmarks_path).exists():
            return image, None
    return image, dataio.load_landmarks(landmarks_path)


def _write_dataset(out: Path, seed: int, n: int, size: int) -> None:
    domain_a, domain_b = generate_dataset(seed, n, size)
    for name, samples in (("a", domain_a), ("b", domain_b)):
        for split, subset in split_dataset(samples).items():
            img_dir = out / "images" / name / split
            img_dir.mkdir(parents=True, exist_ok=True)
            entries = []
            for i, sample in enumerate(subset):
                rel = Path("images") / name / split / f"{name}_{split}_{i:05d}.png"
                dataio.save_image(out / rel, sample.image)
                entries.append((rel.as_posix(), sample.label, sample.landmarks))
            dataio.write_manifest(out / f"manifest_{name}_{split}.txt", entries)


def cmd_synth_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = AppConfig(out_dir=str(out), data_root=str(out))
    cfg.train.seed = args.seed
    cfg.train.image_size = args.size
    echo_config(cfg, out)
    _write_dataset(out, args.seed, args.n_per_domain, args.size)
    print(f"wrote dataset ({args.n_per_domain} per domain, {args.size}x{args.size}) to {out}")
    return 0


def _load_domains(data_root: str, size: int):
    root = Path(data_root)
    domains = {}
    for name in ("a", "b"):
        domains[name] = {}
        for split in ("train", "val", "test"):
            manifest = root / f"manifest_{name}_{split}.txt"
            if not manifest.exists():
                raise DataError(f"missing manifest: {manifest}")
            samples = dataio.load_manifest_samples(manifest)
            for s in samples:
                if s.image.shape[1] != size:
                    raise ConfigError(
                        f"dataset images are {s.image.shape[1]}px but the run is configured for {size}px"
                    )
            domains[name][split] = samples
    return domains["a"], domains["b"]


def _effective_config(args) -> AppConfig:
    cfg = load_config_file(args.config) if getattr(args, "config", None) else AppConfig()
    overrides = {k: v for k, v in vars(args).items() if "." in k}
    apply_overrides(cfg, overrides)
    if getattr(args, "data_root", None):
        cfg.data_root = args.data_root
    if getattr(args, "out_dir", None):
        cfg.out_dir = args.out_dir
    return cfg


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    cfg.train.validate()
    set_default_dtype(np.float32)
    out = Path(cfg.out_dir)
    echo_config(cfg, out)
    split_a, split_b = _load_domains(cfg.data_root, cfg.train.image_size)
    started = time.perf_counter()
    state = train_loop(cfg.train, split_a, split_b, out, resume=args.resume)
    minutes = (time.perf_counter() - started) / 60.0
    print(f"trained to step {state.step} in {minutes:.1f} min; final checkpoint in {out}")

    log_path = out / "train_log.tsv"
    if log_path.exists() and state.step > 0:
        reporting.save_loss_curves(read_train_log(log_path), out / "loss_curves.png")
    report = {"steps": state.step, "minutes": round(minutes, 2)}
    if split_a["val"] and split_b["val"]:
        report["val_cycle_l1"] = validation_cycle_l1(state, split_a["val"], split_b["val"], max_batches=8)
        try:
            classifier = train_attribute_classifier(
                split_a["train"] + split_b["train"], split_a["val"] + split_b["val"], seed=cfg.train.seed
            )
        except MetricError as exc:
            report["classifier"] = f"unavailable ({exc})"
        else:
            scores = evaluate_transfer_model(
                state.transfer, split_a["val"], split_b["val"], classifier, FixedEmbedder(),
                n_pairs=min(100, 4 * len(split_a["val"])), tint_gap=None,
            )
            report.update(scores)
            report["classifier_val_accuracy"] = classifier.validation_accuracy
    reporting.write_tsv(out / "final_report.tsv", list(report), [list(report.values())])
    reporting.write_json(out / "final_report.json", report)
    print("final report:", report)
    return 0


def _echo_checkpoint_config(state, out: Path, data_root="", attribute="mustache"):
    cfg = AppConfig(train=state.config, data_root=str(data_root), attribute=attribute, out_dir=str(out))
    echo_config(cfg, out)


def cmd_transfer(args) -> int:
    set_default_dtype(np.float32)
    state = load_state(args.checkpoint)
    size = state.config.image_size
    target, lm_t = _load_image_landmarks(args.target, args.target_landmarks)
    source, lm_s = _load_image_landmarks(args.source, args.source_landmarks)
    for name, img in (("target", target), ("source", source)):
        if img.shape[1] != size or img.shape[2] != size:
            raise ConfigError(f"{name} image is {img.shape[1]}x{img.shape[2]}, checkpoint expects {size}x{size}")
    if lm_t is not None and lm_s is not None and len(lm_t) != len(lm_s):
        raise DataError(f"landmark counts differ: target {len(lm_t)} vs source {len(lm_s)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_checkpoint_config(state, out)

    from .autodiff.tensor import constant, no_grad

    with no_grad():
        result = state.transfer.forward(constant(target[None]), constant(source[None]))
        dataio.save_image(out / "result.png", clamp_for_output(result.result).data[0])
        if args.save_intermediates:
            dataio.save_image(out / "warped_source.png", clamp_for_output(result.warped).data[0])
            mask = result.mask.data.data[0]
            dataio.save_image(out / "mask.png", np.repeat(mask, 3, axis=0) * 2.0 - 1.0)
            dataio.save_image(out / "residual.png", clamp_for_output(result.residual.data).data[0])
            dataio.save_tensor_blob(out / "flow.fft", result.flow.data.data)
            dataio.save_tensor_blob(out / "mask.fft", result.mask.data.data)
            dataio.save_tensor_blob(out / "residual.fft", result.residual.data.data)
        if args.hires_target or args.hires_source:
            if not (args.hires_target and args.hires_source):
                raise ConfigError("--hires-target and --hires-source must be given together")
            hi_t = dataio.load_image(args.hires_target)
            hi_s = dataio.load_image(args.hires_source)
            if hi_t.shape != hi_s.shape:
                raise DataError(f"high-res pair disagrees: {hi_t.shape} vs {hi_s.shape}")
            hires = apply_transfer(
                constant(hi_t[None]), constant(hi_s[None]), result.flow, result.mask, result.residual
            )
            dataio.save_image(out / "result_hires.png", clamp_for_output(hires).data[0])
    print(f"transfer written to {out}")
    return 0


def cmd_remove(args) -> int:
    set_default_dtype(np.float32)
    state = load_state(args.checkpoint)
    image, _ = _load_image_landmarks(args.input)
    size = state.config.image_size
    if image.shape[1] != size or image.shape[2] != size:
        raise ConfigError(f"input image is {image.shape[1]}x{image.shape[2]}, checkpoint expects {size}x{size}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_checkpoint_config(state, out)
    from .autodiff.tensor import constant, no_grad

    with no_grad():
        removed = state.removal.forward(constant(image[None]))
    dataio.save_image(out / "removed.png", clamp_for_output(removed).data[0])
    print(f"removal written to {out}")
    return 0


def cmd_eval(args) -> int:
    set_default_dtype(np.float32)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    split_a, split_b = _load_domains(args.data, _probe_size(args.data))
    embedder = FixedEmbedder()
    sanity = {
        "fid_a_val_vs_a_train": frechet_distance(
            [s.image for s in split_a["val"]], [s.image for s in split_a["train"][: 4 * len(split_a["val"])]], embedder
        ),
        "fid_a_vs_b": frechet_distance(
            [s.image for s in split_a["val"]], [s.image for s in split_b["val"]], embedder
        ),
    }
    rows = []
    if args.checkpoint:
        state = load_state(args.checkpoint)
        _echo_checkpoint_config(state, out, data_root=args.data)
        classifier = train_attribute_classifier(
            split_a["train"] + split_b["train"], split_a["val"] + split_b["val"], seed=state.config.seed
        )
        scores = evaluate_transfer_model(
            state.transfer, split_a["val"], split_b["val"], classifier, embedder,
            n_pairs=args.pairs, tint_gap=None,
        )
        scores["val_cycle_l1"] = validation_cycle_l1(state, split_a["val"], split_b["val"], max_batches=8)
        rows.append({"variant": "checkpoint", **scores})
        _save_eval_grid(state, split_a["val"], split_b["val"], out)
    if args.ablation:
        ab_cfg = AblationConfig(
            train=TrainConfig(
                image_size=args.ablation_size,
                total_steps=args.ablation_steps,
                checkpoint_interval=0,
                eval_interval=0,
            ),
            n_per_domain=args.ablation_images,
            seeds=tuple(args.seeds),
        )
        report = run_ablation(ab_cfg)
        rows.extend(report.summary())
    if not rows:
        rows.append({"variant": "dataset-only"})
    for row in rows:
        row.update(sanity)
    paths = reporting.save_eval_report(rows, out)
    print(f"eval report: {paths['tsv']}")
    return 0


def _probe_size(data_root) -> int:
    manifest = Path(data_root) / "manifest_a_val.txt"
    entries = dataio.read_manifest(manifest)
    return dataio.load_image(entries[0][0]).shape[1]


def _save_eval_grid(state, val_a, val_b, out: Path, n: int = 6):
    from .autodiff.tensor import constant, no_grad
    from .training import make_batch

    rows = []
    with no_grad():
        pairs = list(zip(val_a[:n], val_b[:n]))
        t_img, _ = make_batch([p[0] for p in pairs])
        s_img, _ = make_batch([p[1] for p in pairs])
        result = state.transfer.forward(t_img, s_img)
        removed = state.removal.forward(s_img)
        for i in range(len(pairs)):
            rows.append(
                [t_img.data[i], s_img.data[i], np.clip(result.result.data[i], -1, 1), np.clip(removed.data[i], -1, 1)]
            )
    reporting.save_sample_grid(rows, out / "samples.png")


def cmd_gradcheck(args) -> int:
    report = standard_battery(size=args.size, width=args.width, samples_per_tensor=args.samples, seed=args.seed)
    print(report.format_table())
    if not report.passed(args.tolerance):
        print(f"FAIL: max relative error {report.max_rel_err:.3e} exceeds {args.tolerance:.0e}", file=sys.stderr)
        return 2
    print(f"PASS: max relative error {report.max_rel_err:.3e} <= {args.tolerance:.0e}")
    return 0


_COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "train": cmd_train,
    "transfer": cmd_transfer,
    "remove": cmd_remove,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (ConfigError, DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FaceflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
