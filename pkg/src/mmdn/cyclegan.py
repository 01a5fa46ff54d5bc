"""Unpaired modality alignment: dual generators, dual patch discriminators,
adversarial + cycle-consistency objective, and the alternating training loop.

Generators map (-1, 1)-scaled images between domains W and N; discriminators
emit patch-grid logits and carry spectral normalization on every conv weight.
The generator side of the min-max is realized in the non-saturating form
(maximize log D(fake)), and discriminator losses are halved before their
update so the discriminators learn at half rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine, layers
from .engine import Node
from .modules import Conv2d, ConvTranspose2d, InstanceNorm2d, SpectralNormConv2d
from .optim import Adam, AdamConfig, LrSchedule
from .params import ParamRegistry


@dataclass
class GeneratorConfig:
    in_channels: int = 3
    out_channels: int = 3
    base_width: int = 16
    residual_blocks: int = 3    # 9 at full scale, 3 at desk scale
    image_size: int = 32


@dataclass
class DiscriminatorConfig:
    in_channels: int = 3
    layers: int = 3
    base_width: int = 16
    leaky_slope: float = 0.2


class ResnetGenerator:
    """Reflection-padded 7x7 stem, two stride-2 downs, residual trunk, two
    stride-2 transposed convs, 7x7 output conv, tanh."""

    def __init__(self, reg: ParamRegistry, prefix: str, cfg: GeneratorConfig,
                 rng: np.random.Generator):
        self.cfg = cfg
        b = cfg.base_width
        self.inorm = InstanceNorm2d()
        self.conv_in = Conv2d(reg, f"{prefix}.conv_in", cfg.in_channels, b, 7,
                              init="gauss002", rng=rng)
        self.down1 = Conv2d(reg, f"{prefix}.down1", b, 2 * b, 3, stride=2,
                            padding=1, init="gauss002", rng=rng)
        self.down2 = Conv2d(reg, f"{prefix}.down2", 2 * b, 4 * b, 3, stride=2,
                            padding=1, init="gauss002", rng=rng)
        self.res = []
        for i in range(cfg.residual_blocks):
            c1 = Conv2d(reg, f"{prefix}.res{i}.conv1", 4 * b, 4 * b, 3,
                        init="gauss002", rng=rng)
            c2 = Conv2d(reg, f"{prefix}.res{i}.conv2", 4 * b, 4 * b, 3,
                        init="gauss002", rng=rng)
            self.res.append((c1, c2))
        self.up1 = ConvTranspose2d(reg, f"{prefix}.up1", 4 * b, 2 * b, 4,
                                   stride=2, padding=1, init="gauss002", rng=rng)
        self.up2 = ConvTranspose2d(reg, f"{prefix}.up2", 2 * b, b, 4,
                                   stride=2, padding=1, init="gauss002", rng=rng)
        self.conv_out = Conv2d(reg, f"{prefix}.conv_out", b, cfg.out_channels, 7,
                               init="gauss002", rng=rng)

    def forward(self, x: Node, mode: str = "train") -> Node:
        h, w = x.value.shape[2:]
        if h % 4 or w % 4:
            raise ValueError(f"generator input dims must be divisible by 4, got {h}x{w}")
        y = engine.relu(self.inorm(self.conv_in(layers.reflection_pad2d(x, 3))))
        y = engine.relu(self.inorm(self.down1(y)))
        y = engine.relu(self.inorm(self.down2(y)))
        for c1, c2 in self.res:
            r = engine.relu(self.inorm(c1(layers.reflection_pad2d(y, 1))))
            r = self.inorm(c2(layers.reflection_pad2d(r, 1)))
            y = engine.add(y, r)
        y = engine.relu(self.inorm(self.up1(y)))
        y = engine.relu(self.inorm(self.up2(y)))
        return engine.tanh(self.conv_out(layers.reflection_pad2d(y, 3)))


class PatchDiscriminator:
    """Three stride-2 spectral-normalized convs with leaky ReLU, then a 1x1
    conv to one channel of patch logits."""

    def __init__(self, reg: ParamRegistry, prefix: str, cfg: DiscriminatorConfig,
                 rng: np.random.Generator):
        self.cfg = cfg
        b = cfg.base_width
        widths = [cfg.in_channels] + [b * (2 ** i) for i in range(cfg.layers)]
        self.convs = [
            SpectralNormConv2d(reg, f"{prefix}.conv{i}", widths[i], widths[i + 1],
                               4, stride=2, padding=1, init="gauss002", rng=rng)
            for i in range(cfg.layers)
        ]
        self.score = SpectralNormConv2d(reg, f"{prefix}.score", widths[-1], 1, 1,
                                        init="gauss002", rng=rng)

    def forward(self, x: Node, mode: str = "train") -> Node:
        min_size = 2 ** self.cfg.layers
        if min(x.value.shape[2:]) < min_size:
            raise ValueError(
                f"discriminator input {x.value.shape[2:]} too small for "
                f"{self.cfg.layers} stride-2 stages")
        y = x
        for conv in self.convs:
            y = engine.leaky_relu(conv(y, mode), self.cfg.leaky_slope)
        return self.score(y, mode)


@dataclass
class CycleGanQuad:
    G: ResnetGenerator          # W -> N
    S: ResnetGenerator          # N -> W
    D_N: PatchDiscriminator
    D_W: PatchDiscriminator
    registry: ParamRegistry
    lambda_n: float = 70.0
    lambda_w: float = 10.0

    def __post_init__(self):
        if self.lambda_n <= 0 or self.lambda_w <= 0:
            raise ValueError("cycle weights must be positive")

    def params(self, prefixes: tuple[str, ...]) -> list:
        return [p for p in self.registry.trainable()
                if p.name.startswith(prefixes)]


def build_cyclegan(gen_cfg: GeneratorConfig | None = None,
                   disc_cfg: DiscriminatorConfig | None = None,
                   lambda_n: float = 70.0, lambda_w: float = 10.0,
                   dtype="single", seed: int = 0) -> CycleGanQuad:
    gen_cfg = gen_cfg or GeneratorConfig()
    disc_cfg = disc_cfg or DiscriminatorConfig(in_channels=gen_cfg.out_channels)
    reg = ParamRegistry(dtype)
    rng = np.random.default_rng([seed, 0xC0])
    return CycleGanQuad(
        G=ResnetGenerator(reg, "G", gen_cfg, rng),
        S=ResnetGenerator(reg, "S", gen_cfg, rng),
        D_N=PatchDiscriminator(reg, "DN", disc_cfg, rng),
        D_W=PatchDiscriminator(reg, "DW", disc_cfg, rng),
        registry=reg, lambda_n=lambda_n, lambda_w=lambda_w)


# ---------------------------------------------------------------------------
# losses

def _bce_like(scores: Node, target_value: float) -> Node:
    t = np.full(scores.value.shape, target_value, dtype=scores.value.dtype)
    return engine.bce_from_logits(scores, t)


def adversarial_losses(quad: CycleGanQuad, real_w: Node, real_n: Node,
                       mode: str = "train",
                       fakes: tuple[Node, Node] | None = None) -> dict[str, Node]:
    """Generator and discriminator BCE terms for one batch pair.

    Discriminator losses are computed on detached fakes and halved, so a D
    update moves at half the rate of the corresponding G update and no
    gradient reaches the generators through the D terms.
    """
    fake_n, fake_w = fakes if fakes is not None else (
        quad.G.forward(real_w, mode), quad.S.forward(real_n, mode))
    loss_g = _bce_like(quad.D_N.forward(fake_n, mode), 1.0)
    loss_s = _bce_like(quad.D_W.forward(fake_w, mode), 1.0)
    loss_dn = engine.scale(
        engine.add(_bce_like(quad.D_N.forward(real_n, mode), 1.0),
                   _bce_like(quad.D_N.forward(fake_n.detach(), mode), 0.0)), 0.5)
    loss_dw = engine.scale(
        engine.add(_bce_like(quad.D_W.forward(real_w, mode), 1.0),
                   _bce_like(quad.D_W.forward(fake_w.detach(), mode), 0.0)), 0.5)
    return {"loss_G": loss_g, "loss_S": loss_s,
            "loss_DN": loss_dn, "loss_DW": loss_dw,
            "fake_n": fake_n, "fake_w": fake_w}


def cycle_loss(quad: CycleGanQuad, real_w: Node, real_n: Node,
               mode: str = "train",
               fakes: tuple[Node, Node] | None = None) -> Node:
    """lambda_n * E||G(S(n)) - n||_1 + lambda_w * E||S(G(w)) - w||_1."""
    fake_n, fake_w = fakes if fakes is not None else (
        quad.G.forward(real_w, mode), quad.S.forward(real_n, mode))
    back_n = quad.G.forward(fake_w, mode)
    back_w = quad.S.forward(fake_n, mode)
    term_n = engine.scale(engine.l1_loss(back_n, real_n), quad.lambda_n)
    term_w = engine.scale(engine.l1_loss(back_w, real_w), quad.lambda_w)
    return engine.add(term_n, term_w)


def full_objective(quad: CycleGanQuad, real_w: Node, real_n: Node,
                   mode: str = "train") -> Node:
    """L_GAN(G, D_N) + L_GAN(S, D_W) + L_cyc(G, S); the logging view of the
    objective the alternating steps optimize."""
    fakes = (quad.G.forward(real_w, mode), quad.S.forward(real_n, mode))
    adv = adversarial_losses(quad, real_w, real_n, mode, fakes=fakes)
    cyc = cycle_loss(quad, real_w, real_n, mode, fakes=fakes)
    return engine.add(engine.add(adv["loss_G"], adv["loss_S"]), cyc)


# ---------------------------------------------------------------------------
# training

def to_signed(images01: np.ndarray) -> np.ndarray:
    return (images01 * 2.0 - 1.0).astype(np.float32)


def to_unit(signed: np.ndarray) -> np.ndarray:
    return np.clip((signed + 1.0) / 2.0, 0.0, 1.0)


def train_cyclegan(quad: CycleGanQuad, pool_w: list[np.ndarray],
                   pool_n: list[np.ndarray], epochs: int,
                   adam_cfg: AdamConfig | None = None,
                   schedule: LrSchedule | None = None,
                   seed: int = 0, log_every: int = 0) -> dict[str, list[float]]:
    """Alternating G/D updates with batch size 1 over unpaired pools.

    ``pool_*`` hold (C,S,S) images in [0,1]. Returns the per-epoch mean of
    each loss term; log length equals ``epochs``.
    """
    if not pool_w or not pool_n:
        raise ValueError("train_cyclegan: empty domain pool")
    adam_cfg = adam_cfg or AdamConfig(lr=2e-4, beta1=0.5, beta2=0.999)
    opt_g = Adam(quad.registry, adam_cfg, params=quad.params(("G.", "S.")))
    opt_d = Adam(quad.registry, adam_cfg, params=quad.params(("DN.", "DW.")))
    w_data = [to_signed(img) for img in pool_w]
    n_data = [to_signed(img) for img in pool_n]
    steps = max(len(w_data), len(n_data))
    log: dict[str, list[float]] = {k: [] for k in
                                   ("loss_G", "loss_S", "loss_DN", "loss_DW", "cycle")}
    for epoch in range(epochs):
        rng = np.random.default_rng([seed, 0xE0, epoch])
        order_w = rng.permutation(len(w_data))
        order_n = rng.permutation(len(n_data))
        if schedule is not None:
            lr = schedule.lr_at_epoch(epoch)
            opt_g.lr = lr
            opt_d.lr = lr
        sums = {k: 0.0 for k in log}
        for step in range(steps):
            w = engine.constant(w_data[order_w[step % len(w_data)]][None])
            n = engine.constant(n_data[order_n[step % len(n_data)]][None])

            fakes = (quad.G.forward(w, "train"), quad.S.forward(n, "train"))
            adv = adversarial_losses(quad, w, n, "train", fakes=fakes)
            cyc = cycle_loss(quad, w, n, "train", fakes=fakes)

            g_total = engine.add(engine.add(adv["loss_G"], adv["loss_S"]), cyc)
            opt_g.zero_grad()
            opt_d.zero_grad()
            engine.backward(g_total)
            opt_g.step()

            opt_d.zero_grad()
            opt_g.zero_grad()
            d_total = engine.add(adv["loss_DN"], adv["loss_DW"])
            engine.backward(d_total)
            opt_d.step()

            sums["loss_G"] += adv["loss_G"].item()
            sums["loss_S"] += adv["loss_S"].item()
            sums["loss_DN"] += adv["loss_DN"].item()
            sums["loss_DW"] += adv["loss_DW"].item()
            sums["cycle"] += cyc.item()
        for k in log:
            log[k].append(sums[k] / steps)
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}/{epochs}: " +
                  " ".join(f"{k}={log[k][-1]:.4f}" for k in log))
    return log


def align_apply(gen: ResnetGenerator, images01: np.ndarray) -> np.ndarray:
    """Translate a (B,C,S,S) batch of [0,1] images; deterministic eval pass."""
    with engine.no_grad():
        out = gen.forward(engine.constant(to_signed(images01)), mode="eval")
    return to_unit(out.value)


def mean_cycle_l1(quad: CycleGanQuad, pool_w, pool_n) -> float:
    """Held-out cycle distance in the signed (-1, 1) pixel range, averaged
    over both directions."""
    total, count = 0.0, 0
    with engine.no_grad():
        for img in pool_w:
            w = engine.constant(to_signed(img)[None])
            back = quad.S.forward(quad.G.forward(w, "eval"), "eval")
            total += float(np.abs(back.value - w.value).mean())
            count += 1
        for img in pool_n:
            n = engine.constant(to_signed(img)[None])
            back = quad.G.forward(quad.S.forward(n, "eval"), "eval")
            total += float(np.abs(back.value - n.value).mean())
            count += 1
    return total / count
