"""Densely connected classifier with a dual-stream fuse block.

The first block can run two modality branches in parallel and, for the second
half of its layers, add the secondary branch's layer outputs element-wise
into the primary branch's outputs before they join the primary concatenation.
Only the primary branch continues past the first block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import engine, layers
from .engine import Node
from .modules import BatchNorm2d, Conv2d, Linear
from .params import ParamRegistry


@dataclass
class DenseLayerConfig:
    in_channels: int
    growth_rate: int
    bottleneck_width: int | None = None   # defaults to 4 * growth_rate
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.bottleneck_width is None:
            self.bottleneck_width = 4 * self.growth_rate
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


@dataclass
class FuseBlockConfig:
    layers_total: int = 16
    layers_parallel: int | None = None    # defaults to layers_total // 2
    stem_channels: int = 24

    def __post_init__(self):
        if self.layers_parallel is None:
            self.layers_parallel = self.layers_total // 2
        if self.layers_parallel > self.layers_total:
            raise ValueError(
                f"layers_parallel {self.layers_parallel} > layers_total {self.layers_total}")


@dataclass
class MultimodalDenseNetConfig:
    num_classes: int
    image_size: int
    growth_rate: int = 12
    block_layers: list[int] = field(default_factory=lambda: [16, 16, 16])
    compression: float = 0.5
    modality_a_channels: int = 3
    modality_b_channels: int = 1
    dropout_rate: float = 0.0
    bottleneck_width: int | None = None

    def __post_init__(self):
        if not 0 < self.compression <= 1:
            raise ValueError(f"compression must be in (0, 1], got {self.compression}")
        if len(self.block_layers) != 3:
            raise ValueError(f"expected 3 dense blocks, got {self.block_layers}")
        if self.image_size % 4 != 0:
            raise ValueError(
                f"image_size must be divisible by 4 (two transitions), got {self.image_size}")

    @property
    def stem_channels(self) -> int:
        return 2 * self.growth_rate


class DenseLayer:
    """BN - ReLU - 1x1 conv - [dropout] - BN - ReLU - 3x3 conv - [dropout]."""

    def __init__(self, reg: ParamRegistry, name: str, cfg: DenseLayerConfig,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.bn1 = BatchNorm2d(reg, f"{name}.bn1", cfg.in_channels)
        self.conv1 = Conv2d(reg, f"{name}.conv1", cfg.in_channels,
                            cfg.bottleneck_width, 1, rng=rng)
        self.bn2 = BatchNorm2d(reg, f"{name}.bn2", cfg.bottleneck_width)
        self.conv2 = Conv2d(reg, f"{name}.conv2", cfg.bottleneck_width,
                            cfg.growth_rate, 3, padding=1, rng=rng)

    def forward(self, x: Node, mode: str, rng=None) -> Node:
        if x.value.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"dense layer expects {self.cfg.in_channels} channels, "
                f"got {x.value.shape[1]}")
        y = self.conv1(engine.relu(self.bn1(x, mode)))
        y = layers.dropout(y, self.cfg.dropout_rate, mode, rng)
        y = self.conv2(engine.relu(self.bn2(y, mode)))
        return layers.dropout(y, self.cfg.dropout_rate, mode, rng)


class DenseBlock:
    """Each layer consumes the concatenation of the block input and all
    previous layer outputs; emits in_channels + L * growth_rate channels."""

    def __init__(self, reg: ParamRegistry, name: str, in_channels: int,
                 num_layers: int, growth_rate: int, rng: np.random.Generator,
                 dropout_rate: float = 0.0, bottleneck_width: int | None = None):
        self.layers = [
            DenseLayer(reg, f"{name}.layer{i}",
                       DenseLayerConfig(in_channels + i * growth_rate, growth_rate,
                                        bottleneck_width, dropout_rate), rng)
            for i in range(num_layers)
        ]
        self.out_channels = in_channels + num_layers * growth_rate

    def forward(self, x: Node, mode: str, rng=None) -> Node:
        feats = [x]
        for layer in self.layers:
            feats.append(layer.forward(layers.concat_channels(feats) if len(feats) > 1
                                       else feats[0], mode, rng))
        return layers.concat_channels(feats)


class FuseBlock:
    """Two parallel dense chains; from layer ``layers_parallel`` on, the
    secondary chain's raw layer output is added into the primary chain's
    output before it joins the primary feature list. The secondary list keeps
    its own unfused outputs and is dropped after the block."""

    def __init__(self, reg: ParamRegistry, name: str, cfg: FuseBlockConfig,
                 growth_rate: int, rng: np.random.Generator,
                 dropout_rate: float = 0.0, bottleneck_width: int | None = None):
        self.cfg = cfg

        def chain(branch):
            return [DenseLayer(
                reg, f"{name}.{branch}.layer{i}",
                DenseLayerConfig(cfg.stem_channels + i * growth_rate, growth_rate,
                                 bottleneck_width, dropout_rate), rng)
                for i in range(cfg.layers_total)]

        self.primary = chain("primary")
        self.secondary = chain("secondary")
        self.out_channels = cfg.stem_channels + cfg.layers_total * growth_rate

    def forward(self, x_primary: Node, x_secondary: Node, mode: str, rng=None) -> Node:
        if x_primary.value.shape != x_secondary.value.shape:
            raise ValueError(
                f"fuse block branch mismatch: {x_primary.value.shape} "
                f"vs {x_secondary.value.shape}")
        feats_p, feats_s = [x_primary], [x_secondary]
        for i in range(self.cfg.layers_total):
            in_p = layers.concat_channels(feats_p) if len(feats_p) > 1 else feats_p[0]
            in_s = layers.concat_channels(feats_s) if len(feats_s) > 1 else feats_s[0]
            out_p = self.primary[i].forward(in_p, mode, rng)
            out_s = self.secondary[i].forward(in_s, mode, rng)
            if i >= self.cfg.layers_parallel:
                out_p = engine.add(out_p, out_s)
            feats_p.append(out_p)
            feats_s.append(out_s)
        return layers.concat_channels(feats_p)


class Transition:
    """BN - ReLU - 1x1 compression conv - 2x2 average pool (stride 2)."""

    def __init__(self, reg: ParamRegistry, name: str, in_channels: int,
                 compression: float, rng: np.random.Generator):
        self.out_channels = math.ceil(compression * in_channels)
        self.bn = BatchNorm2d(reg, f"{name}.bn", in_channels)
        self.conv = Conv2d(reg, f"{name}.conv", in_channels, self.out_channels, 1, rng=rng)

    def forward(self, x: Node, mode: str) -> Node:
        h, w = x.value.shape[2:]
        if h % 2 or w % 2:
            raise ValueError(f"transition needs even spatial dims, got {h}x{w}")
        return layers.avg_pool2d(self.conv(engine.relu(self.bn(x, mode))), 2, 2)


class ClassifyHead:
    """ReLU - global average pool - linear; softmax lives in the loss."""

    def __init__(self, reg: ParamRegistry, name: str, in_channels: int,
                 num_classes: int, rng: np.random.Generator):
        self.fc = Linear(reg, f"{name}.fc", in_channels, num_classes, rng=rng)

    def forward(self, x: Node) -> Node:
        return self.fc(layers.global_avg_pool2d(engine.relu(x)))


class ClassifierModel:
    """Common surface for every classifier in this package.

    ``forward`` takes the primary modality and, for dual-stream models, the
    secondary one; ``capture`` stores the named intermediate activation on
    ``self.captured`` for introspection.
    """

    kind = "base"
    multimodal = False

    def __init__(self, registry: ParamRegistry, dropout_seed: int = 0):
        self.registry = registry
        self.captured: Node | None = None
        self._dropout_rng = np.random.default_rng([dropout_seed, 0xD0])

    def reseed_dropout(self, seed: int, epoch: int = 0) -> None:
        self._dropout_rng = np.random.default_rng([seed, 0xD0, epoch])

    def forward(self, x_a: Node, x_b: Node | None = None, mode: str = "eval",
                capture: str | None = None) -> Node:
        raise NotImplementedError

    def capture_points(self) -> list[str]:
        raise NotImplementedError

    def _capture(self, name: str, node: Node, wanted: str | None) -> None:
        if wanted is not None and name == wanted:
            self.captured = node

    def _check_capture(self, wanted: str | None) -> None:
        if wanted is not None and wanted not in self.capture_points():
            raise ValueError(
                f"unknown capture layer {wanted!r}; available: {self.capture_points()}")

    def predict_logits(self, x_a: np.ndarray, x_b: np.ndarray | None = None) -> np.ndarray:
        with engine.no_grad():
            args = [engine.constant(x_a.astype(self.registry.dtype, copy=False))]
            if self.multimodal:
                args.append(engine.constant(x_b.astype(self.registry.dtype, copy=False)))
            return self.forward(*args, mode="eval").value


class MultimodalDenseNet(ClassifierModel):
    kind = "mmdensenet"
    multimodal = True

    def __init__(self, cfg: MultimodalDenseNetConfig, dtype="single", seed: int = 0):
        super().__init__(ParamRegistry(dtype), dropout_seed=seed)
        self.cfg = cfg
        rng = np.random.default_rng([seed, 0xA0])
        reg, k = self.registry, cfg.growth_rate

        self.stem_primary = Conv2d(reg, "stem.primary.conv", cfg.modality_a_channels,
                                   cfg.stem_channels, 3, padding=1, rng=rng)
        self.stem_secondary = Conv2d(reg, "stem.secondary.conv", cfg.modality_b_channels,
                                     cfg.stem_channels, 3, padding=1, rng=rng)
        self.fuse = FuseBlock(reg, "fuse",
                              FuseBlockConfig(cfg.block_layers[0],
                                              stem_channels=cfg.stem_channels),
                              k, rng, cfg.dropout_rate, cfg.bottleneck_width)
        c = self.fuse.out_channels
        self.trans1 = Transition(reg, "trans1", c, cfg.compression, rng)
        c = self.trans1.out_channels
        self.block2 = DenseBlock(reg, "block2", c, cfg.block_layers[1], k, rng,
                                 cfg.dropout_rate, cfg.bottleneck_width)
        c = self.block2.out_channels
        self.trans2 = Transition(reg, "trans2", c, cfg.compression, rng)
        c = self.trans2.out_channels
        self.block3 = DenseBlock(reg, "block3", c, cfg.block_layers[2], k, rng,
                                 cfg.dropout_rate, cfg.bottleneck_width)
        self.head = ClassifyHead(reg, "head", self.block3.out_channels,
                                 cfg.num_classes, rng)

    def capture_points(self) -> list[str]:
        return ["stem.out", "fuse.out", "trans1.out", "block2.out",
                "trans2.out", "block3.out"]

    def forward(self, x_a, x_b=None, mode="eval", capture=None):
        if x_b is None:
            raise ValueError("mmdensenet forward needs both modalities")
        self._check_capture(capture)
        rng = self._dropout_rng
        p = self.stem_primary(x_a)
        s = self.stem_secondary(x_b)
        self._capture("stem.out", p, capture)
        y = self.fuse.forward(p, s, mode, rng)
        self._capture("fuse.out", y, capture)
        y = self.trans1.forward(y, mode)
        self._capture("trans1.out", y, capture)
        y = self.block2.forward(y, mode, rng)
        self._capture("block2.out", y, capture)
        y = self.trans2.forward(y, mode)
        self._capture("trans2.out", y, capture)
        y = self.block3.forward(y, mode, rng)
        self._capture("block3.out", y, capture)
        return self.head.forward(y)


class MonomodalDenseNet(ClassifierModel):
    """Single-branch variant: a plain dense block where the fuse block was."""

    kind = "densenet"
    multimodal = False

    def __init__(self, cfg: MultimodalDenseNetConfig, dtype="single", seed: int = 0):
        super().__init__(ParamRegistry(dtype), dropout_seed=seed)
        self.cfg = cfg
        rng = np.random.default_rng([seed, 0xA0])
        reg, k = self.registry, cfg.growth_rate

        self.stem = Conv2d(reg, "stem.conv", cfg.modality_a_channels,
                           cfg.stem_channels, 3, padding=1, rng=rng)
        self.block1 = DenseBlock(reg, "block1", cfg.stem_channels,
                                 cfg.block_layers[0], k, rng,
                                 cfg.dropout_rate, cfg.bottleneck_width)
        c = self.block1.out_channels
        self.trans1 = Transition(reg, "trans1", c, cfg.compression, rng)
        c = self.trans1.out_channels
        self.block2 = DenseBlock(reg, "block2", c, cfg.block_layers[1], k, rng,
                                 cfg.dropout_rate, cfg.bottleneck_width)
        c = self.block2.out_channels
        self.trans2 = Transition(reg, "trans2", c, cfg.compression, rng)
        c = self.trans2.out_channels
        self.block3 = DenseBlock(reg, "block3", c, cfg.block_layers[2], k, rng,
                                 cfg.dropout_rate, cfg.bottleneck_width)
        self.head = ClassifyHead(reg, "head", self.block3.out_channels,
                                 cfg.num_classes, rng)

    def capture_points(self) -> list[str]:
        return ["stem.out", "block1.out", "trans1.out", "block2.out",
                "trans2.out", "block3.out"]

    def forward(self, x_a, x_b=None, mode="eval", capture=None):
        self._check_capture(capture)
        rng = self._dropout_rng
        y = self.stem(x_a)
        self._capture("stem.out", y, capture)
        y = self.block1.forward(y, mode, rng)
        self._capture("block1.out", y, capture)
        y = self.trans1.forward(y, mode)
        self._capture("trans1.out", y, capture)
        y = self.block2.forward(y, mode, rng)
        self._capture("block2.out", y, capture)
        y = self.trans2.forward(y, mode)
        self._capture("trans2.out", y, capture)
        y = self.block3.forward(y, mode, rng)
        self._capture("block3.out", y, capture)
        return self.head.forward(y)


def build_mmdensenet(cfg: MultimodalDenseNetConfig, dtype="single",
                     seed: int = 0) -> MultimodalDenseNet:
    return MultimodalDenseNet(cfg, dtype, seed)


def build_densenet(cfg: MultimodalDenseNetConfig, dtype="single",
                   seed: int = 0) -> MonomodalDenseNet:
    return MonomodalDenseNet(cfg, dtype, seed)


def expected_param_count(cfg: MultimodalDenseNetConfig, multimodal: bool = True) -> int:
    """Closed-form trainable parameter count from the channel arithmetic."""
    k = cfg.growth_rate
    bw = cfg.bottleneck_width if cfg.bottleneck_width is not None else 4 * k

    def dense_layer(cin):
        return 2 * cin + cin * bw + 2 * bw + bw * k * 9

    def dense_chain(cin, n):
        return sum(dense_layer(cin + i * k) for i in range(n))

    stem_c = cfg.stem_channels
    total = 0
    if multimodal:
        total += stem_c * cfg.modality_a_channels * 9
        total += stem_c * cfg.modality_b_channels * 9
        total += 2 * dense_chain(stem_c, cfg.block_layers[0])
    else:
        total += stem_c * cfg.modality_a_channels * 9
        total += dense_chain(stem_c, cfg.block_layers[0])
    c = stem_c + cfg.block_layers[0] * k
    for n in cfg.block_layers[1:]:
        c_out = math.ceil(cfg.compression * c)
        total += 2 * c + c * c_out          # transition BN + 1x1 conv
        total += dense_chain(c_out, n)
        c = c_out + n * k
    total += c * cfg.num_classes + cfg.num_classes
    return total
