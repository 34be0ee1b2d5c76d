"""Cycle-consistency training loop for the transfer/removal/discriminator trio.

Each step alternates one discriminator update (on detached generator outputs)
with one joint transfer+removal update driven by the combined objective. All
stochastic choices (batch order, flip coins) come from one serialized
generator, so a run is bitwise-reproducible and resumable from any
checkpoint in deterministic mode.

Training log: one tab-separated row per step with columns
    step d_adv_g d_adv_f d_cls_r d_total adv_g adv_f cls_f rec lm tv
    g_total ema_rec flow_linf wall_s
Loss columns are raw (unweighted) term values; *_total are the weighted sums
actually optimized.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .autodiff.optim import Adam
from .autodiff.ops import clamp, concat, narrow
from .autodiff.tensor import Tensor, backward, constant, no_grad
from .checkpoints import read_checkpoint, write_checkpoint
from .config import TrainConfig
from .errors import CheckpointError, ContractError, NumericalError
from .losses import LossWeights, cls_loss, cycle_loss, full_objective, landmark_loss, lsgan_d_loss, lsgan_g_loss, tv_loss
from .networks import Discriminator, NetworkConfig, RemovalModule, TransferModule, build_networks
from .numerics import default_dtype
from .synthdata import Sample, hflip_augment

LOG_COLUMNS = (
    "step",
    "d_adv_g",
    "d_adv_f",
    "d_cls_r",
    "d_total",
    "adv_g",
    "adv_f",
    "cls_f",
    "rec",
    "lm",
    "tv",
    "g_total",
    "ema_rec",
    "flow_linf",
    "wall_s",
)

EMA_DECAY = 0.99


class _EpochSampler:
    """Shuffled epoch index stream; state is serializable for exact resume."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def draw(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            if self.pos >= self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            take = min(k, self.n - self.pos)
            out.append(self.order[self.pos : self.pos + take])
            self.pos += take
            k -= take
        return np.concatenate(out)

    def state(self) -> dict:
        return {"order": self.order.tolist(), "pos": self.pos}

    def load_state(self, state: dict) -> None:
        self.order = np.asarray(state["order"], dtype=np.int64)
        self.pos = int(state["pos"])


@dataclass
class TrainState:
    config: TrainConfig
    transfer: TransferModule
    removal: RemovalModule
    disc: Discriminator
    opt_gf: Adam
    opt_d: Adam
    rng: np.random.Generator
    sampler_a: _EpochSampler
    sampler_b: _EpochSampler
    step: int = 0
    loss_ema: dict = field(default_factory=dict)

    def all_named_params(self):
        return self.transfer.parameters() + self.removal.parameters() + self.disc.parameters()


def init_state(config: TrainConfig, n_a: int, n_b: int, use_flow=True, use_refine=True) -> TrainState:
    config.validate()
    net_cfg = NetworkConfig(
        image_size=config.image_size,
        base_width=config.base_width,
        alpha=config.alpha,
        seed=config.seed,
        use_flow=use_flow,
        use_refine=use_refine,
    )
    transfer, removal, disc = build_networks(net_cfg)
    opt_gf = Adam(
        transfer.parameters() + removal.parameters(),
        lr=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
    )
    opt_d = Adam(disc.parameters(), lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2)
    rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence([config.seed, 7])))
    sampler_a = _EpochSampler(n_a, rng)
    sampler_b = _EpochSampler(n_b, rng)
    return TrainState(config, transfer, removal, disc, opt_gf, opt_d, rng, sampler_a, sampler_b)


def make_batch(samples: List[Sample], dtype=None):
    dtype = dtype if dtype is not None else default_dtype()
    images = constant(np.stack([s.image for s in samples]).astype(dtype))
    landmarks = np.stack([s.landmarks.points for s in samples])
    return images, landmarks


def train_step(state: TrainState, batch_a: List[Sample], batch_b: List[Sample]) -> dict:
    """One discriminator update then one joint transfer+removal update.

    Landmarks of generated intermediates reuse the ground truth of the sample
    they originate from (the transfer preserves geometry by construction).
    Returns the raw loss terms plus weighted totals for logging.
    """
    w = state.config.weights
    bs = len(batch_a)
    a_img, a_lm = make_batch(batch_a)
    b_img, b_lm = make_batch(batch_b)

    # discriminator phase: generators frozen, all four streams in one pass;
    # the discriminator always scores images in the displayable range, so
    # out-of-range excursions earn no adversarial reward (the cycle loss,
    # which stays unclamped, is what pulls them back)
    with no_grad():
        fake_b = state.transfer.forward(a_img, b_img).result
        fake_a = state.removal.forward(b_img)
    state.opt_d.zero_grad()
    stacked = constant(
        np.concatenate([b_img.data, a_img.data, np.clip(fake_b.data, -1, 1), np.clip(fake_a.data, -1, 1)])
    )
    patch, cls_logit = state.disc.forward(stacked)
    real_b_patch, real_a_patch, fake_b_patch, fake_a_patch = (
        narrow(patch, 0, i * bs, bs) for i in range(4)
    )
    d_adv_g = lsgan_d_loss(real_b_patch, fake_b_patch)
    d_adv_f = lsgan_d_loss(real_a_patch, fake_a_patch)
    d_cls_r = cls_loss(narrow(cls_logit, 0, bs, bs), 0) + cls_loss(narrow(cls_logit, 0, 0, bs), 1)
    d_total = d_adv_g * w.w_adv_g + d_adv_f * w.w_adv_f + d_cls_r * w.w_cls_r
    _check_finite(d_total, "discriminator loss", state, batch_a, batch_b)
    backward(d_total)
    if state.config.grad_clip > 0:
        state.opt_d.clip_gradients(state.config.grad_clip)
    state.opt_d.step()

    # joint transfer/removal phase; removal runs both streams in one pass
    state.opt_gf.zero_grad()
    out_ab = state.transfer.forward(a_img, b_img)
    removal_both = state.removal.forward(concat([b_img, out_ab.result], axis=0))
    removed_b = narrow(removal_both, 0, 0, bs)
    cycle_a = narrow(removal_both, 0, bs, bs)
    out_back = state.transfer.forward(removed_b, out_ab.result)
    rec = cycle_loss(cycle_a, a_img) + cycle_loss(out_back.result, b_img)
    gen_patch, gen_cls = state.disc.forward(clamp(concat([out_ab.result, removed_b], axis=0), -1.0, 1.0))
    adv_g = lsgan_g_loss(narrow(gen_patch, 0, 0, bs))
    adv_f = lsgan_g_loss(narrow(gen_patch, 0, bs, bs))
    cls_f = cls_loss(narrow(gen_cls, 0, 0, bs), 1) + cls_loss(narrow(gen_cls, 0, bs, bs), 0)
    lm = (landmark_loss(out_ab.flow, a_lm, b_lm) + landmark_loss(out_back.flow, b_lm, a_lm)) * 0.5
    tv = (tv_loss(out_ab.flow) + tv_loss(out_back.flow)) * 0.5
    g_total = full_objective(
        {"adv_g": adv_g, "adv_f": adv_f, "cls_f": cls_f, "rec": rec, "lm": lm, "tv": tv}, w
    )
    _check_finite(g_total, "generator loss", state, batch_a, batch_b)
    backward(g_total)
    if state.config.grad_clip > 0:
        state.opt_gf.clip_gradients(state.config.grad_clip)
    state.opt_gf.step()

    state.step += 1
    terms = {
        "d_adv_g": d_adv_g.item(),
        "d_adv_f": d_adv_f.item(),
        "d_cls_r": d_cls_r.item(),
        "d_total": d_total.item(),
        "adv_g": adv_g.item(),
        "adv_f": adv_f.item(),
        "cls_f": cls_f.item(),
        "rec": rec.item(),
        "lm": lm.item(),
        "tv": tv.item(),
        "g_total": g_total.item(),
        "flow_linf": float(np.abs(out_ab.flow.data.data).max()),
    }
    for key in ("rec", "g_total", "d_total"):
        prev = state.loss_ema.get(key, terms[key])
        state.loss_ema[key] = EMA_DECAY * prev + (1.0 - EMA_DECAY) * terms[key]
    terms["ema_rec"] = state.loss_ema["rec"]
    return terms


def _check_finite(loss: Tensor, what: str, state, batch_a, batch_b):
    if not np.isfinite(loss.data).all():
        err = NumericalError(f"non-finite {what} at step {state.step}")
        err.diagnostics = {
            "step": state.step,
            "batch_a": np.stack([s.image for s in batch_a]),
            "batch_b": np.stack([s.image for s in batch_b]),
        }
        raise err


def validation_cycle_l1(state: TrainState, val_a: List[Sample], val_b: List[Sample], max_batches=2) -> float:
    """Mean L1 of removal(transfer(a, b)) against a over validation pairs."""
    bs = state.config.batch_size
    total, count = 0.0, 0
    with no_grad():
        for i in range(max_batches):
            aa = [val_a[(i * bs + j) % len(val_a)] for j in range(bs)]
            bb = [val_b[(i * bs + j) % len(val_b)] for j in range(bs)]
            a_img, _ = make_batch(aa)
            b_img, _ = make_batch(bb)
            out = state.transfer.forward(a_img, b_img)
            rec = state.removal.forward(out.result)
            total += float(np.abs(rec.data - a_img.data).mean())
            count += 1
    return total / max(count, 1)


def _augment(rng: np.random.Generator, batch: List[Sample]) -> List[Sample]:
    return [hflip_augment(s) if rng.random() < 0.5 else s for s in batch]


def save_state(state: TrainState, path) -> None:
    arrays = {name: p.data for name, p in state.all_named_params()}
    for prefix, opt in (("opt_gf", state.opt_gf), ("opt_d", state.opt_d)):
        for name, arr in opt.state_arrays().items():
            arrays[f"{prefix}.{name}"] = arr
    meta = {
        "kind": "faceflow-train-state",
        "step": state.step,
        "config": state.config.to_dict(),
        "variant": {"use_flow": state.transfer.use_flow, "use_refine": state.transfer.use_refine},
        "rng": _encode_rng(state.rng),
        "sampler_a": state.sampler_a.state(),
        "sampler_b": state.sampler_b.state(),
        "opt_t": {"gf": state.opt_gf.t, "d": state.opt_d.t},
        "loss_ema": state.loss_ema,
    }
    write_checkpoint(path, meta, arrays)


def load_state(path, expected_config: Optional[TrainConfig] = None) -> TrainState:
    meta, arrays = read_checkpoint(path)
    if meta.get("kind") != "faceflow-train-state":
        raise CheckpointError(f"{path}: checkpoint holds {meta.get('kind')!r}, not a train state")
    config = TrainConfig.from_dict(meta["config"])
    if expected_config is not None:
        ours = expected_config.structural_fields()
        theirs = config.structural_fields()
        for key in ours:
            if ours[key] != theirs[key]:
                raise CheckpointError(
                    f"{path}: checkpoint config mismatch on '{key}': "
                    f"checkpoint has {theirs[key]!r}, this run has {ours[key]!r}"
                )
        config = expected_config
    variant = meta.get("variant", {})
    state = init_state(
        config,
        n_a=len(meta["sampler_a"]["order"]),
        n_b=len(meta["sampler_b"]["order"]),
        use_flow=variant.get("use_flow", True),
        use_refine=variant.get("use_refine", True),
    )
    dtype = default_dtype()
    for name, p in state.all_named_params():
        if name not in arrays:
            raise CheckpointError(f"{path}: checkpoint missing parameter '{name}'")
        if tuple(arrays[name].shape) != p.shape:
            raise CheckpointError(
                f"{path}: parameter '{name}' shape {arrays[name].shape} != expected {p.shape}"
            )
        p.data = arrays[name].astype(dtype)
    for prefix, opt in (("opt_gf", state.opt_gf), ("opt_d", state.opt_d)):
        sub = {
            name[len(prefix) + 1 :]: arr.astype(dtype)
            for name, arr in arrays.items()
            if name.startswith(prefix + ".")
        }
        opt.load_state_arrays(sub, meta["opt_t"]["gf" if prefix == "opt_gf" else "d"])
    state.rng = _decode_rng(meta["rng"])
    state.sampler_a.rng = state.rng
    state.sampler_b.rng = state.rng
    state.sampler_a.load_state(meta["sampler_a"])
    state.sampler_b.load_state(meta["sampler_b"])
    state.step = int(meta["step"])
    state.loss_ema = dict(meta["loss_ema"])
    return state


def _encode_rng(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _decode_rng(state: dict) -> np.random.Generator:
    gen = np.random.default_rng(np.random.PCG64(0))
    gen.bit_generator.state = state
    return gen


def train_loop(
    config: TrainConfig,
    domain_a: List[Sample],
    domain_b: List[Sample],
    out_dir,
    resume: Optional[str] = None,
    progress=None,
) -> TrainState:
    """Run the full loop over pre-split domains; returns the final state.

    ``domain_a``/``domain_b`` are dicts with train/val lists or plain lists
    (then split 80/10/10 here). Writes train_log.tsv, eval_log.tsv, periodic
    and final checkpoints under ``out_dir``.
    """
    from .synthdata import split_dataset

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    split_a = domain_a if isinstance(domain_a, dict) else split_dataset(domain_a)
    split_b = domain_b if isinstance(domain_b, dict) else split_dataset(domain_b)
    train_a, train_b = split_a["train"], split_b["train"]
    val_a, val_b = split_a["val"], split_b["val"]

    if resume is not None:
        state = load_state(resume, expected_config=config)
        log_mode = "a"
    else:
        state = init_state(config, len(train_a), len(train_b))
        log_mode = "w"
        save_state(state, out / "checkpoint_initial.ckpt")

    log_path = out / "train_log.tsv"
    eval_path = out / "eval_log.tsv"
    with open(log_path, log_mode) as log, open(eval_path, log_mode) as ev:
        if log_mode == "w":
            log.write("\t".join(LOG_COLUMNS) + "\n")
            ev.write("step\tval_cycle_l1\n")
        start = time.perf_counter()
        while state.step < config.total_steps:
            idx_a = state.sampler_a.draw(config.batch_size)
            idx_b = state.sampler_b.draw(config.batch_size)
            batch_a = _augment(state.rng, [train_a[i] for i in idx_a])
            batch_b = _augment(state.rng, [train_b[i] for i in idx_b])
            try:
                terms = train_step(state, batch_a, batch_b)
            except NumericalError as err:
                dump = out / f"diagnostics_step{state.step}.npz"
                np.savez(dump, **getattr(err, "diagnostics", {}))
                raise NumericalError(f"{err} (offending batch dumped to {dump})") from err
            terms["step"] = state.step
            terms["wall_s"] = time.perf_counter() - start
            log.write("\t".join(_fmt(terms[c]) for c in LOG_COLUMNS) + "\n")
            if config.eval_interval and state.step % config.eval_interval == 0 and val_a and val_b:
                ev.write(f"{state.step}\t{validation_cycle_l1(state, val_a, val_b):.6f}\n")
                ev.flush()
            if config.checkpoint_interval and state.step % config.checkpoint_interval == 0:
                save_state(state, out / f"checkpoint_step{state.step}.ckpt")
            if progress is not None:
                progress(state.step, terms)
    save_state(state, out / "checkpoint_final.ckpt")
    return state


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def read_train_log(path) -> dict:
    """Columns of a train log as float arrays keyed by name."""
    lines = Path(path).read_text().splitlines()
    header = lines[0].split("\t")
    rows = [line.split("\t") for line in lines[1:] if line.strip()]
    cols = {name: np.array([float(r[i]) for r in rows]) for i, name in enumerate(header)}
    return cols
