"""Dual-input conditional GAN for StO2 estimation.

The generator encodes RGB and the sparse cube in separate branches, fuses
them by channel concatenation, refines with a residual trunk, and decodes to
a sigmoid StO2 raster. The discriminator is a patch classifier over the
condition (RGB + sparse cube) concatenated with a real or synthesized map;
its 30x30 score map on 256x256 input corresponds to 70x70-pixel patches.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .hypercube import EFFECTIVE, PixelMask
from .nn import Parameter, Tape, Tensor
from .nn.tensor import record_op
from .oximetry import StO2Map

log = logging.getLogger(__name__)

SCORE_CLAMP = 1e-7


@dataclass(frozen=True)
class GeneratorConfig:
    rgb_channels: int = 3
    shsi_channels: int = 24
    rgb_stem_channels: int = 32
    shsi_stem_channels: int = 32
    branch_downsamples: int = 2
    branch_residual_blocks: int = 2
    fusion_residual_blocks: int = 4
    decoder_upsamples: int = 2
    out_channels: int = 1

    @property
    def branch_out(self) -> int:
        return self.rgb_stem_channels * 2**self.branch_downsamples

    @property
    def fused_channels(self) -> int:
        rgb = self.rgb_stem_channels * 2**self.branch_downsamples
        shsi = self.shsi_stem_channels * 2**self.branch_downsamples
        return rgb + shsi


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 3 + 24 + 1  # condition (rgb + sparse cube) plus the map
    widths: tuple = (64, 128, 256, 512)
    strides: tuple = (2, 2, 2, 1)
    kernel: int = 4
    leaky_slope: float = 0.2


@dataclass(frozen=True)
class LossWeights:
    beta: float = 400.0  # L1 weight

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")


class _Branch:
    """Stem + strided downsamples + residual blocks for one input modality."""

    def __init__(self, rng, name, in_ch, stem_ch, downsamples, blocks, dtype):
        self.layers = []
        self.stem_w, self.stem_b = nn.conv_params(rng, f"{name}.stem", stem_ch, in_ch, 7, dtype)
        self.stem_s, self.stem_h = nn.norm_params(f"{name}.stem.norm", stem_ch, dtype)
        ch = stem_ch
        self.downs = []
        for i in range(downsamples):
            w, b = nn.conv_params(rng, f"{name}.down{i}", ch * 2, ch, 3, dtype)
            s, h = nn.norm_params(f"{name}.down{i}.norm", ch * 2, dtype)
            self.downs.append((w, b, s, h))
            ch *= 2
        self.blocks = [nn.ResidualBlock(rng, f"{name}.res{i}", ch, dtype)
                       for i in range(blocks)]
        self.out_channels = ch

    def parameters(self):
        ps = [self.stem_w, self.stem_b, self.stem_s, self.stem_h]
        for w, b, s, h in self.downs:
            ps += [w, b, s, h]
        for blk in self.blocks:
            ps += blk.parameters()
        return ps

    def __call__(self, x: Tensor) -> Tensor:
        y = nn.conv2d(x, self.stem_w, self.stem_b, stride=1, padding=3)
        y = nn.relu(nn.instance_norm(y, self.stem_s, self.stem_h))
        for w, b, s, h in self.downs:
            y = nn.conv2d(y, w, b, stride=2, padding=1)
            y = nn.relu(nn.instance_norm(y, s, h))
        for blk in self.blocks:
            y = blk(y)
        return y


class Generator:
    """Dual-branch encoder, fused residual trunk, transposed-conv decoder."""

    def __init__(self, cfg: GeneratorConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.rgb_branch = _Branch(rng, "g.rgb", cfg.rgb_channels, cfg.rgb_stem_channels,
                                  cfg.branch_downsamples, cfg.branch_residual_blocks, dtype)
        self.shsi_branch = _Branch(rng, "g.shsi", cfg.shsi_channels, cfg.shsi_stem_channels,
                                   cfg.branch_downsamples, cfg.branch_residual_blocks, dtype)
        ch = cfg.fused_channels
        self.trunk = [nn.ResidualBlock(rng, f"g.fuse{i}", ch, dtype)
                      for i in range(cfg.fusion_residual_blocks)]
        self.ups = []
        for i in range(cfg.decoder_upsamples):
            w, b = nn.conv_params(rng, f"g.up{i}", ch // 2, ch, 4, dtype, transpose=True)
            s, h = nn.norm_params(f"g.up{i}.norm", ch // 2, dtype)
            self.ups.append((w, b, s, h))
            ch //= 2
        self.out_w, self.out_b = nn.conv_params(rng, "g.out", cfg.out_channels, ch, 7, dtype)

    def parameters(self) -> list[Parameter]:
        ps = self.rgb_branch.parameters() + self.shsi_branch.parameters()
        for blk in self.trunk:
            ps += blk.parameters()
        for w, b, s, h in self.ups:
            ps += [w, b, s, h]
        ps += [self.out_w, self.out_b]
        return ps

    def __call__(self, rgb: Tensor, shsi: Tensor) -> Tensor:
        if rgb.data.shape[1] != self.cfg.rgb_channels:
            raise ValueError(f"expected {self.cfg.rgb_channels} rgb channels")
        if shsi.data.shape[1] != self.cfg.shsi_channels:
            raise ValueError(f"expected {self.cfg.shsi_channels} sparse-cube channels")
        if rgb.data.shape[2:] != shsi.data.shape[2:]:
            raise ValueError("rgb and sparse-cube rasters must share spatial dims")
        fused = nn.concat_channels(self.rgb_branch(rgb), self.shsi_branch(shsi))
        for blk in self.trunk:
            fused = blk(fused)
        y = fused
        for w, b, s, h in self.ups:
            y = nn.conv_transpose2d(y, w, b, stride=2, padding=1)
            y = nn.relu(nn.instance_norm(y, s, h))
        y = nn.conv2d(y, self.out_w, self.out_b, stride=1, padding=3)
        return nn.sigmoid(y)


class Discriminator:
    """Patch classifier emitting a sigmoid score map."""

    def __init__(self, cfg: DiscriminatorConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.layers = []
        ch = cfg.in_channels
        for i, (width, stride) in enumerate(zip(cfg.widths, cfg.strides)):
            w, b = nn.conv_params(rng, f"d.conv{i}", width, ch, cfg.kernel, dtype)
            norm = nn.norm_params(f"d.conv{i}.norm", width, dtype) if i > 0 else None
            self.layers.append((w, b, stride, norm))
            ch = width
        self.out_w, self.out_b = nn.conv_params(rng, "d.out", 1, ch, cfg.kernel, dtype)

    def parameters(self) -> list[Parameter]:
        ps = []
        for w, b, _, norm in self.layers:
            ps += [w, b]
            if norm is not None:
                ps += list(norm)
        ps += [self.out_w, self.out_b]
        return ps

    def __call__(self, condition: Tensor, y: Tensor) -> Tensor:
        x = nn.concat_channels(condition, y)
        if x.data.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"discriminator expects {self.cfg.in_channels} channels, got {x.data.shape[1]}"
            )
        for w, b, stride, norm in self.layers:
            x = nn.conv2d(x, w, b, stride=stride, padding=1)
            if norm is not None:
                x = nn.instance_norm(x, *norm)
            x = nn.leaky_relu(x, self.cfg.leaky_slope)
        x = nn.conv2d(x, self.out_w, self.out_b, stride=1, padding=1)
        return nn.sigmoid(x)

    def receptive_field(self) -> int:
        """Input pixels seen by one output unit (walked back through the stack)."""
        rf = 1
        for _, _, stride, _ in reversed([*self.layers, (None, None, 1, None)]):
            rf = (rf - 1) * stride + self.cfg.kernel
        return rf


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def masked_l1(y_hat: Tensor, y: np.ndarray, effective: np.ndarray) -> Tensor:
    """Mean |y_hat - y| over effective pixels; excluded pixels get zero gradient."""
    y = np.asarray(y, dtype=y_hat.data.dtype)
    eff = np.broadcast_to(np.asarray(effective, dtype=bool), y_hat.data.shape)
    n_eff = int(eff.sum())
    if n_eff == 0:
        raise ValueError("masked_l1: no effective pixels")
    diff = y_hat.data - y
    value = np.abs(diff[eff]).sum() / n_eff
    out = Tensor(np.asarray(value, dtype=y_hat.data.dtype),
                 requires_grad=y_hat.requires_grad)

    def backward(dout):
        if y_hat.requires_grad:
            g = np.where(eff, np.sign(diff), 0.0).astype(y_hat.data.dtype)
            y_hat.accumulate(g * (dout / n_eff))

    record_op(out, backward)
    return out


def bce_mean(scores: Tensor, target: float, clamp: float = SCORE_CLAMP) -> Tensor:
    """Binary cross-entropy of sigmoid scores against a constant target."""
    p = np.clip(scores.data, clamp, 1.0 - clamp)
    value = -(target * np.log(p) + (1.0 - target) * np.log1p(-p)).mean()
    out = Tensor(np.asarray(value, dtype=scores.data.dtype),
                 requires_grad=scores.requires_grad)
    n = scores.data.size

    def backward(dout):
        if scores.requires_grad:
            inside = (scores.data > clamp) & (scores.data < 1.0 - clamp)
            g = np.where(inside, (p - target) / (p * (1.0 - p)), 0.0)
            scores.accumulate((g / n).astype(scores.data.dtype) * dout)

    record_op(out, backward)
    return out


def scale(x: Tensor, k: float) -> Tensor:
    out = Tensor(x.data * x.data.dtype.type(k), requires_grad=x.requires_grad)

    def backward(dout):
        if x.requires_grad:
            x.accumulate(dout * x.data.dtype.type(k))

    record_op(out, backward)
    return out


def gan_losses(scores_real: Tensor, scores_fake: Tensor, y_hat: Tensor,
               y: np.ndarray, effective: np.ndarray,
               weights: LossWeights = LossWeights()) -> tuple[Tensor, Tensor]:
    """(loss_D, loss_G) from sigmoid patch score maps.

    loss_D = BCE(real, 1) + BCE(fake, 0); loss_G = BCE(fake, 1) + beta * masked L1.
    """
    if scores_real.data.shape != scores_fake.data.shape:
        raise ValueError("score maps must share a shape")
    loss_d = nn.add(bce_mean(scores_real, 1.0), bce_mean(scores_fake, 0.0))
    loss_g = nn.add(bce_mean(scores_fake, 1.0),
                    scale(masked_l1(y_hat, y, effective), weights.beta))
    return loss_d, loss_g


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    log_every: int = 25
    checkpoint_every: int = 0  # 0: final checkpoint only
    mask_adversarial: bool = False  # alternative: zero patch loss over excluded regions
    stop_l1_below: float | None = None  # early stop on full-train masked error
    eval_every: int = 20


@dataclass
class TrainState:
    generator: Generator
    discriminator: Discriminator
    optim_g: nn.AdamState
    optim_d: nn.AdamState
    step: int = 0
    seed: int = 0
    history: list = field(default_factory=list)  # rows (step, loss_d, loss_g, l1, adv)


def _stack_batch(samples) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    rgb = np.stack([s.rgb for s in samples]).astype(np.float32)
    shsi = np.stack([s.shsi for s in samples]).astype(np.float32)
    y = np.stack([s.target for s in samples]).astype(np.float32)[:, None]
    eff = np.stack([s.mask == EFFECTIVE for s in samples])[:, None]
    return rgb, shsi, y, eff


def train_masked_error(gen: Generator, samples, batch_size: int = 8) -> float:
    """Masked mean absolute error of the generator over a sample set."""
    total, count = 0.0, 0
    for lo in range(0, len(samples), batch_size):
        batch = [samples[i] for i in range(lo, min(lo + batch_size, len(samples)))]
        rgb, shsi, y, eff = _stack_batch(batch)
        pred = gen(Tensor(rgb), Tensor(shsi)).data
        err = np.abs(pred - y)[eff]
        total += float(err.sum())
        count += err.size
    if count == 0:
        raise ValueError("no effective pixels in sample set")
    return total / count


def train(samples, gen_cfg: GeneratorConfig = GeneratorConfig(),
          disc_cfg: DiscriminatorConfig = DiscriminatorConfig(),
          weights: LossWeights = LossWeights(), cfg: TrainConfig = TrainConfig(),
          out_dir: str | Path | None = None) -> TrainState:
    """Adversarial training: one discriminator step, then one generator step per batch.

    Deterministic for a fixed seed: parameter init, batch order, and every
    reduction run in fixed order. Aborts on non-finite losses.
    """
    if len(samples) == 0:
        raise ValueError("training set is empty")
    gen = Generator(gen_cfg, seed=cfg.seed)
    disc = Discriminator(disc_cfg, seed=cfg.seed + 1)
    g_params = gen.parameters()
    d_params = disc.parameters()
    state = TrainState(generator=gen, discriminator=disc,
                       optim_g=nn.AdamState(g_params), optim_d=nn.AdamState(d_params),
                       seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed + 2)
    order = rng.permutation(len(samples))
    cursor = 0
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        loss_log = open(out_dir / "loss_log.csv", "w")
        loss_log.write("step,loss_d,loss_g,l1_term,adv_term\n")
    else:
        loss_log = None

    try:
        for step in range(1, cfg.steps + 1):
            idx = []
            for _ in range(cfg.batch_size):
                if cursor >= len(order):
                    order = rng.permutation(len(samples))
                    cursor = 0
                idx.append(int(order[cursor]))
                cursor += 1
            rgb, shsi, y, eff = _stack_batch([samples[i] for i in idx])
            adv_mask = eff if cfg.mask_adversarial else None

            rgb_t, shsi_t = Tensor(rgb), Tensor(shsi)
            tape_g = Tape()
            with tape_g:
                fake = gen(rgb_t, shsi_t)
            cond = Tensor(np.concatenate([rgb, shsi], axis=1))

            tape_d = Tape()
            with tape_d:
                d_real = disc(cond, Tensor(y))
                d_fake = disc(cond, fake.detach())
                loss_d = nn.add(_adv_bce(d_real, 1.0, adv_mask),
                                _adv_bce(d_fake, 0.0, adv_mask))
            if not np.isfinite(loss_d.data):
                raise FloatingPointError(f"non-finite discriminator loss at step {step}")
            for p in d_params:
                p.zero_grad()
            tape_d.backward(loss_d)
            nn.adam_step(d_params, state.optim_d, cfg.lr, cfg.beta1, cfg.beta2)

            with tape_g:
                d_fake_g = disc(cond, fake)
                adv = _adv_bce(d_fake_g, 1.0, adv_mask)
                l1 = masked_l1(fake, y, eff)
                loss_g = nn.add(adv, scale(l1, weights.beta))
            if not np.isfinite(loss_g.data):
                raise FloatingPointError(f"non-finite generator loss at step {step}")
            for p in (*g_params, *d_params):
                p.zero_grad()
            tape_g.backward(loss_g)
            nn.adam_step(g_params, state.optim_g, cfg.lr, cfg.beta1, cfg.beta2)
            for p in (*g_params, *d_params):
                p.zero_grad()

            state.step = step
            row = (step, float(loss_d.data), float(loss_g.data),
                   float(l1.data), float(adv.data))
            state.history.append(row)
            if loss_log is not None:
                loss_log.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                        for v in row) + "\n")
            if cfg.log_every and step % cfg.log_every == 0:
                log.info("step %d: loss_d %.4f loss_g %.4f l1 %.4f",
                         step, row[1], row[2], row[3])
            if out_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                save_train_checkpoint(out_dir / f"checkpoint_{step:06d}.oxnn", state,
                                      gen_cfg, disc_cfg, weights, cfg)
            if (cfg.stop_l1_below is not None and cfg.eval_every
                    and step % cfg.eval_every == 0):
                err = train_masked_error(gen, samples)
                if err < cfg.stop_l1_below:
                    log.info("early stop at step %d: train masked error %.4f", step, err)
                    break
    finally:
        if loss_log is not None:
            loss_log.close()

    if out_dir is not None:
        save_train_checkpoint(out_dir / "checkpoint_final.oxnn", state,
                              gen_cfg, disc_cfg, weights, cfg)
    return state


def _adv_bce(scores: Tensor, target: float, eff: np.ndarray | None) -> Tensor:
    """Patch BCE, optionally restricted to patches whose centre region is effective."""
    if eff is None:
        return bce_mean(scores, target)
    n, _, h, w = scores.data.shape
    from .imaging import resize_nearest

    patch_eff = resize_nearest(eff.astype(np.uint8), h, w).astype(bool)
    return _masked_bce(scores, target, patch_eff)


def _masked_bce(scores: Tensor, target: float, keep: np.ndarray,
                clamp: float = SCORE_CLAMP) -> Tensor:
    keep = np.broadcast_to(keep, scores.data.shape)
    n_keep = int(keep.sum())
    if n_keep == 0:
        return bce_mean(scores, target)
    p = np.clip(scores.data, clamp, 1.0 - clamp)
    terms = -(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    value = terms[keep].sum() / n_keep
    out = Tensor(np.asarray(value, dtype=scores.data.dtype),
                 requires_grad=scores.requires_grad)

    def backward(dout):
        if scores.requires_grad:
            inside = (scores.data > clamp) & (scores.data < 1.0 - clamp) & keep
            g = np.where(inside, (p - target) / (p * (1.0 - p)), 0.0)
            scores.accumulate((g / n_keep).astype(scores.data.dtype) * dout)

    record_op(out, backward)
    return out


# ---------------------------------------------------------------------------
# Checkpoints and inference
# ---------------------------------------------------------------------------


def save_train_checkpoint(path: Path, state: TrainState, gen_cfg: GeneratorConfig,
                          disc_cfg: DiscriminatorConfig, weights: LossWeights,
                          cfg: TrainConfig) -> None:
    arrays = {}
    for p in state.generator.parameters():
        arrays[f"gen/{p.name}"] = p.data
    for p in state.discriminator.parameters():
        arrays[f"disc/{p.name}"] = p.data
    for key, opt in (("optim_g", state.optim_g), ("optim_d", state.optim_d)):
        for name, arr in opt.m.items():
            arrays[f"{key}/m/{name}"] = arr
        for name, arr in opt.v.items():
            arrays[f"{key}/v/{name}"] = arr
    if state.history:
        arrays["history"] = np.asarray(state.history, dtype=np.float64)
    meta = {
        "kind": "dual_gan",
        "generator_config": asdict(gen_cfg),
        "discriminator_config": asdict(disc_cfg),
        "loss_weights": asdict(weights),
        "train_config": asdict(cfg),
        "step": state.step,
        "seed": state.seed,
        "optim_t": {"gen": state.optim_g.t, "disc": state.optim_d.t},
    }
    nn.save_checkpoint(path, arrays, meta)


def load_generator(path: str | Path) -> tuple[Generator, dict]:
    """Rebuild the generator from a checkpoint; raises on config/name mismatch."""
    meta, arrays = nn.load_checkpoint(path)
    raw = dict(meta.get("generator_config") or {})
    try:
        gen_cfg = GeneratorConfig(**raw)
    except TypeError as exc:
        raise ValueError(f"{path}: unusable generator config ({exc})") from exc
    gen = Generator(gen_cfg, seed=0)
    for p in gen.parameters():
        key = f"gen/{p.name}"
        if key not in arrays:
            raise ValueError(f"{path}: checkpoint missing parameter {key}")
        if arrays[key].shape != p.data.shape:
            raise ValueError(f"{path}: shape mismatch for {key}")
        p.data = arrays[key].astype(p.data.dtype)
    return gen, meta


def restore_train_state(path: str | Path) -> tuple[TrainState, GeneratorConfig,
                                                   DiscriminatorConfig, LossWeights,
                                                   TrainConfig]:
    meta, arrays = nn.load_checkpoint(path)
    gen_cfg = GeneratorConfig(**meta["generator_config"])
    disc_cfg_raw = dict(meta["discriminator_config"])
    for key in ("widths", "strides"):
        disc_cfg_raw[key] = tuple(disc_cfg_raw[key])
    disc_cfg = DiscriminatorConfig(**disc_cfg_raw)
    weights = LossWeights(**meta["loss_weights"])
    cfg = TrainConfig(**meta["train_config"])
    gen = Generator(gen_cfg, seed=0)
    disc = Discriminator(disc_cfg, seed=0)
    for prefix, net in (("gen", gen), ("disc", disc)):
        for p in net.parameters():
            p.data = arrays[f"{prefix}/{p.name}"].astype(p.data.dtype)
    optim_g = nn.AdamState(gen.parameters())
    optim_d = nn.AdamState(disc.parameters())
    for key, opt in (("optim_g", optim_g), ("optim_d", optim_d)):
        for name in opt.m:
            opt.m[name] = arrays[f"{key}/m/{name}"].astype(np.float32)
            opt.v[name] = arrays[f"{key}/v/{name}"].astype(np.float32)
    optim_g.t = meta["optim_t"]["gen"]
    optim_d.t = meta["optim_t"]["disc"]
    history = [tuple(r) for r in arrays.get("history", np.zeros((0, 5))).tolist()]
    state = TrainState(generator=gen, discriminator=disc, optim_g=optim_g,
                       optim_d=optim_d, step=meta["step"], seed=meta["seed"],
                       history=history)
    return state, gen_cfg, disc_cfg, weights, cfg


def infer(gen: Generator, rgb: np.ndarray, shsi: np.ndarray,
          mask: PixelMask | None = None) -> tuple[StO2Map, float]:
    """One forward pass; returns the map packaged with the input mask and the wall time."""
    rgb = np.nan_to_num(np.asarray(rgb, dtype=np.float32), nan=0.0)
    shsi = np.nan_to_num(np.asarray(shsi, dtype=np.float32), nan=0.0)
    t0 = time.perf_counter()
    pred = gen(Tensor(rgb[None]), Tensor(shsi[None])).data[0, 0]
    elapsed = time.perf_counter() - t0
    if mask is None:
        mask = PixelMask(np.full(pred.shape, EFFECTIVE, dtype=np.uint8))
    log.info("inference: %dx%d in %.1f ms", pred.shape[1], pred.shape[0], elapsed * 1e3)
    return StO2Map(values=pred.astype(np.float32), mask=mask), elapsed
