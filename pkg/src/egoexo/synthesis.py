"""Exo-to-ego conditional GAN: generator, pair discriminator, losses, and
the training loop.

The generator is an encoder-decoder with skip connections over 256x256
images normalized to [-1, 1]; the discriminator scores (conditioning exo,
candidate ego) 6-channel stacks at patch level. The training objective adds
an L1 reconstruction term weighted by ``lambda_l1`` to the adversarial
loss; the generator uses the non-saturating adversarial form.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn as nn

from . import checkpoints, data
from .errors import DataEmpty, SchemaError, ShapeError

PROB_EPS = 1e-7
CKPT_KIND = "synthesis"


@dataclass
class SynthesisConfig:
    lambda_l1: float = 100.0
    epochs: int = 15
    batch_size: int = 1
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    checkpoint_every: int = 5  # epochs; 0 = final checkpoint only
    base_channels: int = 64
    gen_depth: int = 8
    disc_layers: int = 3
    image_size: int = data.SYNTHESIS_SIZE

    def __post_init__(self):
        if self.lambda_l1 < 0:
            raise SchemaError("lambda_l1 must be >= 0")
        if self.epochs < 1:
            raise SchemaError("epochs must be >= 1")
        if self.batch_size < 1:
            raise SchemaError("batch_size must be >= 1")


def normalize_frame(frame: np.ndarray) -> np.ndarray:
    """uint8 HxWx3 -> float32 CxHxW in [-1, 1]."""
    arr = np.asarray(frame, dtype=np.float32) / 127.5 - 1.0
    return np.transpose(arr, (2, 0, 1))


def denormalize(tensor: torch.Tensor) -> np.ndarray:
    """CxHxW in [-1, 1] -> uint8 HxWx3."""
    arr = tensor.detach().cpu().numpy()
    arr = np.transpose(arr, (1, 2, 0))
    return np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# networks

class UNetGenerator(nn.Module):
    """Encoder-decoder with skip connections; tanh keeps outputs in [-1, 1].

    Depth is the number of stride-2 stages; the innermost stage skips
    normalization (its spatial extent can be 1x1).
    """

    def __init__(self, in_channels: int = 3, out_channels: int = 3,
                 base_channels: int = 64, depth: int = 8):
        super().__init__()
        if depth < 2:
            raise SchemaError("generator depth must be >= 2")
        widths = [min(base_channels * 2**i, base_channels * 8) for i in range(depth)]
        self.depth = depth

        downs = []
        prev = in_channels
        for i, w in enumerate(widths):
            block = [nn.Conv2d(prev, w, 4, 2, 1)]
            if 0 < i < depth - 1:
                block.append(nn.InstanceNorm2d(w, affine=True))
            block.append(nn.LeakyReLU(0.2, inplace=True))
            downs.append(nn.Sequential(*block))
            prev = w
        self.downs = nn.ModuleList(downs)

        ups = []
        for i in reversed(range(depth)):
            out_w = widths[i - 1] if i > 0 else base_channels
            in_w = widths[i] if i == depth - 1 else widths[i] * 2
            block = [nn.ConvTranspose2d(in_w, out_w, 4, 2, 1)]
            if i > 0:
                block.append(nn.InstanceNorm2d(out_w, affine=True))
                block.append(nn.ReLU(inplace=True))
            ups.append(nn.Sequential(*block))
        self.ups = nn.ModuleList(ups)
        self.final = nn.Conv2d(base_channels, out_channels, 3, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for down in self.downs:
            x = down(x)
            skips.append(x)
        x = skips.pop()
        for i, up in enumerate(self.ups):
            x = up(x if i == 0 else torch.cat([x, skips.pop()], dim=1))
        return torch.tanh(self.final(x))


class PatchDiscriminator(nn.Module):
    """Convolutional classifier over (conditioning, candidate) stacks
    emitting a grid of probabilities in (0, 1)."""

    def __init__(self, in_channels: int = 6, base_channels: int = 64, layers: int = 3):
        super().__init__()
        blocks = [nn.Conv2d(in_channels, base_channels, 4, 2, 1), nn.LeakyReLU(0.2, inplace=True)]
        prev = base_channels
        for i in range(1, layers):
            w = min(base_channels * 2**i, base_channels * 8)
            blocks += [
                nn.Conv2d(prev, w, 4, 2, 1),
                nn.InstanceNorm2d(w, affine=True),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            prev = w
        w = min(base_channels * 2**layers, base_channels * 8)
        blocks += [
            nn.Conv2d(prev, w, 4, 1, 1),
            nn.InstanceNorm2d(w, affine=True),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w, 1, 4, 1, 1),
        ]
        self.net = nn.Sequential(*blocks)

    def forward(self, cond: torch.Tensor, candidate: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.net(torch.cat([cond, candidate], dim=1)))


def build_models(cfg: SynthesisConfig) -> tuple[UNetGenerator, PatchDiscriminator]:
    torch.manual_seed(cfg.seed)
    gen = UNetGenerator(base_channels=cfg.base_channels, depth=cfg.gen_depth)
    disc = PatchDiscriminator(base_channels=cfg.base_channels, layers=cfg.disc_layers)
    return gen, disc


# ---------------------------------------------------------------------------
# losses

def l1_loss(real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    """Mean absolute per-pixel difference between normalized images."""
    if real.shape != fake.shape:
        raise ShapeError(f"shape mismatch {tuple(real.shape)} vs {tuple(fake.shape)}")
    return (real - fake).abs().mean()


def adversarial_loss(
    disc: PatchDiscriminator,
    exo: torch.Tensor,
    ego: torch.Tensor,
    fake: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Discriminator and generator adversarial losses for one batch.

    loss_D = -[log D(ego, exo) + log(1 - D(fake, exo))], means over batch
    and patches; loss_G is the non-saturating -log D(fake, exo).
    Probabilities are clamped away from {0, 1} so both terms stay finite.
    """
    for name, t in (("exo", exo), ("ego", ego), ("fake", fake)):
        if t.shape != exo.shape:
            raise ShapeError(f"{name} batch shape {tuple(t.shape)} differs")
    p_real = disc(exo, ego).clamp(PROB_EPS, 1.0 - PROB_EPS)
    p_fake = disc(exo, fake).clamp(PROB_EPS, 1.0 - PROB_EPS)
    loss_d = -(torch.log(p_real).mean() + torch.log(1.0 - p_fake).mean())
    loss_g = -torch.log(p_fake).mean()
    return loss_d, loss_g


def combined_loss(adv, l1, cfg: SynthesisConfig):
    """Total generator objective: adversarial term plus lambda-weighted L1."""
    return adv + cfg.lambda_l1 * l1


# ---------------------------------------------------------------------------
# inference

def generate(gen: UNetGenerator, frame: np.ndarray) -> np.ndarray:
    """Map one exocentric frame (256x256x3 uint8) to an egocentric frame."""
    frame = np.asarray(frame)
    if frame.shape != (data.SYNTHESIS_SIZE, data.SYNTHESIS_SIZE, 3):
        raise ShapeError(
            f"generator input must be {data.SYNTHESIS_SIZE}x{data.SYNTHESIS_SIZE}x3, "
            f"got {frame.shape}"
        )
    gen.eval()
    with torch.no_grad():
        x = torch.from_numpy(normalize_frame(frame))[None]
        y = gen(x)[0]
    return denormalize(y)


def load_generator(path: str | Path) -> tuple[UNetGenerator, SynthesisConfig, checkpoints.Checkpoint]:
    ckpt = checkpoints.load_checkpoint(path, expect_kind=CKPT_KIND)
    cfg = SynthesisConfig(**ckpt.config)
    gen, disc = build_models(cfg)
    model = _JointModel(gen, disc)
    ckpt.apply_to(model)
    return gen, cfg, ckpt


class _JointModel(nn.Module):
    """Container so one archive holds both networks under stable names."""

    def __init__(self, gen: UNetGenerator, disc: PatchDiscriminator):
        super().__init__()
        self.gen = gen
        self.disc = disc


# ---------------------------------------------------------------------------
# training

@dataclass
class EpochLog:
    epoch: int
    d_steps: int
    g_steps: int
    loss_d: float
    loss_g_adv: float
    loss_l1: float

    def as_dict(self) -> dict:
        return asdict(self)


def _load_training_pairs(manifest: data.Manifest, split: str) -> tuple[np.ndarray, np.ndarray]:
    exo_list, ego_list = [], []
    for seq in manifest.split_sequences(split):
        for t in range(seq.length):
            exo = data.resize_for_synthesis(data.load_frame(seq.frame_path("exo", t)))
            ego = data.resize_for_synthesis(data.load_frame(seq.frame_path("ego", t)))
            exo_list.append(normalize_frame(exo))
            ego_list.append(normalize_frame(ego))
    if not exo_list:
        raise DataEmpty(f"no pairs in split {split!r}")
    return np.stack(exo_list), np.stack(ego_list)


def train(
    manifest: data.Manifest,
    cfg: SynthesisConfig,
    init: Optional[str | Path] = None,
    out_dir: Optional[str | Path] = None,
    split: str = "train",
    max_pairs: Optional[int] = None,
    log_cb: Optional[Callable[[dict], None]] = None,
) -> tuple[list[Path], list[EpochLog]]:
    """Alternating D/G training over the aligned pairs of a split.

    Returns the checkpoint series (written under ``out_dir``, or a
    temporary-less empty list when no out_dir is given) and per-epoch logs.
    ``init`` resumes from a checkpoint archive, restoring optimizer state
    when present.
    """
    exo_all, ego_all = _load_training_pairs(manifest, split)
    if max_pairs is not None:
        exo_all, ego_all = exo_all[:max_pairs], ego_all[:max_pairs]
    n = len(exo_all)

    gen, disc = build_models(cfg)
    model = _JointModel(gen, disc)
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))

    start_epoch = 0
    steps_trained = 0
    if init is not None:
        ckpt = checkpoints.load_checkpoint(init, expect_kind=CKPT_KIND)
        ckpt.apply_to(model)
        ckpt.restore_optimizer("gen", opt_g)
        ckpt.restore_optimizer("disc", opt_d)
        start_epoch = ckpt.epoch
        steps_trained = ckpt.steps_trained

    out_dir = Path(out_dir) if out_dir is not None else None
    rng = np.random.default_rng(cfg.seed + start_epoch)
    history: list[EpochLog] = []
    ckpt_paths: list[Path] = []

    def save(tag: str, epoch: int) -> None:
        if out_dir is None:
            return
        path = checkpoints.save_checkpoint(
            out_dir / f"synth_{tag}.ckpt.npz",
            CKPT_KIND,
            asdict(cfg),
            model,
            optimizers={"gen": opt_g, "disc": opt_d},
            epoch=epoch,
            steps_trained=steps_trained,
        )
        ckpt_paths.append(path)

    for epoch in range(start_epoch + 1, start_epoch + cfg.epochs + 1):
        order = rng.permutation(n)
        sums = {"d": 0.0, "g": 0.0, "l1": 0.0}
        d_steps = g_steps = 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            exo = torch.from_numpy(exo_all[idx])
            ego = torch.from_numpy(ego_all[idx])

            fake = gen(exo)

            loss_d, _ = adversarial_loss(disc, exo, ego, fake.detach())
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()
            d_steps += 1

            _, loss_g_adv = adversarial_loss(disc, exo, ego, fake)
            loss_l1 = l1_loss(ego, fake)
            loss_g = combined_loss(loss_g_adv, loss_l1, cfg)
            opt_g.zero_grad()
            loss_g.backward()
            opt_g.step()
            g_steps += 1
            steps_trained += 1

            sums["d"] += float(loss_d.detach())
            sums["g"] += float(loss_g_adv.detach())
            sums["l1"] += float(loss_l1.detach())

        log = EpochLog(
            epoch=epoch,
            d_steps=d_steps,
            g_steps=g_steps,
            loss_d=sums["d"] / d_steps,
            loss_g_adv=sums["g"] / g_steps,
            loss_l1=sums["l1"] / g_steps,
        )
        history.append(log)
        if log_cb is not None:
            log_cb({"event": "synthesis_epoch", **log.as_dict()})
        if cfg.checkpoint_every and (epoch - start_epoch) % cfg.checkpoint_every == 0:
            save(f"epoch{epoch:04d}", epoch)

    save("final", start_epoch + cfg.epochs)
    return ckpt_paths, history


def generate_split(
    ckpt_path: str | Path,
    manifest: data.Manifest,
    split: str,
    out_dir: str | Path,
) -> int:
    """Run the generator over every exo frame of a split, writing PNGs under
    ``out_dir/<sequence id>/%06d.png``. Returns the frame count."""
    gen, _, _ = load_generator(ckpt_path)
    out_dir = Path(out_dir)
    count = 0
    for seq in manifest.split_sequences(split):
        for t in range(seq.length):
            exo = data.resize_for_synthesis(data.load_frame(seq.frame_path("exo", t)))
            fake = generate(gen, exo)
            data.save_frame(fake, out_dir / seq.id / f"{t:06d}.png")
            count += 1
    return count
