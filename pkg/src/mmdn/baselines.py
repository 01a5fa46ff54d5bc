"""Desk-scale baselines: small VGG-style and ResNet-style stacks, each with a
dual-branch variant that adds the secondary branch's stage outputs into the
primary branch after every stage."""

from __future__ import annotations

import numpy as np

from . import engine, layers
from .densenet import ClassifierModel, ClassifyHead
from .modules import BatchNorm2d, Conv2d
from .params import ParamRegistry

BASELINE_KINDS = ("mini-vgg", "mini-vgg-fuse", "mini-resnet", "mini-resnet-fuse")
_STAGE_WIDTHS = (16, 32, 64)


class _VggStage:
    """conv-BN-relu, conv-BN-relu, 2x2 average pool."""

    def __init__(self, reg, name, in_ch, out_ch, rng):
        self.conv1 = Conv2d(reg, f"{name}.conv1", in_ch, out_ch, 3, padding=1, rng=rng)
        self.bn1 = BatchNorm2d(reg, f"{name}.bn1", out_ch)
        self.conv2 = Conv2d(reg, f"{name}.conv2", out_ch, out_ch, 3, padding=1, rng=rng)
        self.bn2 = BatchNorm2d(reg, f"{name}.bn2", out_ch)

    def forward(self, x, mode):
        y = engine.relu(self.bn1(self.conv1(x), mode))
        y = engine.relu(self.bn2(self.conv2(y), mode))
        return layers.avg_pool2d(y, 2, 2)


class _ResStage:
    """Stride-2 residual block with a projection shortcut."""

    def __init__(self, reg, name, in_ch, out_ch, rng):
        self.conv1 = Conv2d(reg, f"{name}.conv1", in_ch, out_ch, 3, stride=2,
                            padding=1, rng=rng)
        self.bn1 = BatchNorm2d(reg, f"{name}.bn1", out_ch)
        self.conv2 = Conv2d(reg, f"{name}.conv2", out_ch, out_ch, 3, padding=1, rng=rng)
        self.bn2 = BatchNorm2d(reg, f"{name}.bn2", out_ch)
        self.proj = Conv2d(reg, f"{name}.proj", in_ch, out_ch, 1, stride=2, rng=rng)
        self.bn_proj = BatchNorm2d(reg, f"{name}.bn_proj", out_ch)

    def forward(self, x, mode):
        main = engine.relu(self.bn1(self.conv1(x), mode))
        main = self.bn2(self.conv2(main), mode)
        skip = self.bn_proj(self.proj(x), mode)
        return engine.relu(engine.add(main, skip))


def _make_branch(style, reg, prefix, in_ch, rng):
    if style == "vgg":
        stages, c = [], in_ch
        for i, width in enumerate(_STAGE_WIDTHS):
            stages.append(_VggStage(reg, f"{prefix}stage{i + 1}", c, width, rng))
            c = width
        return None, stages
    stem = Conv2d(reg, f"{prefix}stem.conv", in_ch, _STAGE_WIDTHS[0], 3,
                  padding=1, rng=rng)
    stem_bn = BatchNorm2d(reg, f"{prefix}stem.bn", _STAGE_WIDTHS[0])
    stages, c = [], _STAGE_WIDTHS[0]
    for i, width in enumerate(_STAGE_WIDTHS):
        stages.append(_ResStage(reg, f"{prefix}stage{i + 1}", c, width, rng))
        c = width
    return (stem, stem_bn), stages


class BaselineModel(ClassifierModel):
    def __init__(self, kind: str, num_classes: int, image_size: int,
                 modality_a_channels: int = 3, modality_b_channels: int = 1,
                 dtype="single", seed: int = 0):
        if kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline kind {kind!r}; one of {BASELINE_KINDS}")
        if image_size % 8 != 0:
            raise ValueError(f"image_size must be divisible by 8, got {image_size}")
        super().__init__(ParamRegistry(dtype), dropout_seed=seed)
        self.kind = kind
        self.multimodal = kind.endswith("-fuse")
        self.num_classes = num_classes
        self.image_size = image_size
        style = "vgg" if kind.startswith("mini-vgg") else "resnet"
        self.style = style
        rng = np.random.default_rng([seed, 0xB0])
        reg = self.registry

        self.stem_p, self.stages_p = _make_branch(style, reg, "", modality_a_channels, rng)
        if self.multimodal:
            self.stem_s, self.stages_s = _make_branch(
                style, reg, "secondary.", modality_b_channels, rng)
        self.head = ClassifyHead(reg, "head", _STAGE_WIDTHS[-1], num_classes, rng)

    def capture_points(self):
        return [f"stage{i + 1}.out" for i in range(len(self.stages_p))]

    def forward(self, x_a, x_b=None, mode="eval", capture=None):
        self._check_capture(capture)
        if self.multimodal and x_b is None:
            raise ValueError(f"{self.kind} forward needs both modalities")
        p = x_a
        s = x_b if self.multimodal else None
        if self.stem_p is not None:
            conv, bn = self.stem_p
            p = engine.relu(bn(conv(p), mode))
            if self.multimodal:
                conv_s, bn_s = self.stem_s
                s = engine.relu(bn_s(conv_s(s), mode))
        for i, stage in enumerate(self.stages_p):
            p = stage.forward(p, mode)
            if self.multimodal:
                s = self.stages_s[i].forward(s, mode)
                p = engine.add(p, s)
            self._capture(f"stage{i + 1}.out", p, capture)
        return self.head.forward(p)


def build_baseline(kind: str, num_classes: int, image_size: int,
                   modality_a_channels: int = 3, modality_b_channels: int = 1,
                   dtype="single", seed: int = 0) -> BaselineModel:
    return BaselineModel(kind, num_classes, image_size, modality_a_channels,
                         modality_b_channels, dtype, seed)
