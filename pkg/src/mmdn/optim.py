"""Optimizers (Nesterov SGD, Adam) and piecewise learning-rate schedules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamRegistry


@dataclass
class SgdConfig:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"SgdConfig: lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"SgdConfig: momentum must be in [0, 1), got {self.momentum}")


@dataclass
class AdamConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("AdamConfig: betas must be in [0, 1)")


class SGD:
    """Classical Nesterov momentum with coupled weight decay.

    Per step: g <- grad + weight_decay*w; v <- momentum*v + g;
    w <- w - lr*(g + momentum*v).
    """

    def __init__(self, registry: ParamRegistry, cfg: SgdConfig):
        self.registry = registry
        self.cfg = cfg
        self.lr = cfg.lr
        self._velocity = {p.name: np.zeros_like(p.node.value)
                          for p in registry.trainable()}

    def step(self) -> None:
        mom, wd = self.cfg.momentum, self.cfg.weight_decay
        for p in self.registry.trainable():
            if p.node.grad is None:
                raise ValueError(f"SGD.step: parameter {p.name!r} has no gradient")
            g = p.node.grad.astype(p.node.value.dtype, copy=False)
            if wd:
                g = g + wd * p.node.value
            v = self._velocity[p.name]
            v *= mom
            v += g
            p.node.value -= self.lr * (g + mom * v)

    def zero_grad(self) -> None:
        self.registry.zero_grad()

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(f"velocity.{name}", v) for name, v in self._velocity.items()]

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, v in self._velocity.items():
            src = arrays[f"velocity.{name}"]
            np.copyto(v, src.astype(v.dtype, copy=False))


class Adam:
    """Bias-corrected adaptive moments."""

    def __init__(self, registry: ParamRegistry, cfg: AdamConfig,
                 params: list | None = None):
        self.registry = registry
        self.cfg = cfg
        self.lr = cfg.lr
        self.t = 0
        self._params = params if params is not None else registry.trainable()
        self._m = {p.name: np.zeros_like(p.node.value) for p in self._params}
        self._v = {p.name: np.zeros_like(p.node.value) for p in self._params}

    def step(self) -> None:
        self.t += 1
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in self._params:
            if p.node.grad is None:
                raise ValueError(f"Adam.step: parameter {p.name!r} has no gradient")
            g = p.node.grad.astype(p.node.value.dtype, copy=False)
            m = self._m[p.name]
            v = self._v[p.name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.node.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + eps)

    def zero_grad(self) -> None:
        for p in self._params:
            p.node.grad = None

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        items = [("adam.t", np.asarray([float(self.t)]))]
        items += [(f"adam.m.{n}", a) for n, a in self._m.items()]
        items += [(f"adam.v.{n}", a) for n, a in self._v.items()]
        return items

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["adam.t"][0])
        for n, a in self._m.items():
            np.copyto(a, arrays[f"adam.m.{n}"].astype(a.dtype, copy=False))
        for n, a in self._v.items():
            np.copyto(a, arrays[f"adam.v.{n}"].astype(a.dtype, copy=False))


def sgd_step(registry: ParamRegistry, cfg: SgdConfig, state: SGD | None = None) -> SGD:
    """One-shot functional form; returns the (possibly fresh) optimizer state."""
    opt = state or SGD(registry, cfg)
    opt.step()
    return opt


def adam_step(registry: ParamRegistry, cfg: AdamConfig, state: Adam | None = None,
              t: int | None = None) -> Adam:
    opt = state or Adam(registry, cfg)
    if t is not None and t < 1:
        raise ValueError(f"adam_step: t must be >= 1, got {t}")
    opt.step()
    return opt


# ---------------------------------------------------------------------------
# learning-rate schedules

@dataclass
class LrSchedule:
    """Piecewise schedule: a list of (epoch_span, mode) segments.

    mode is ("constant", value) or ("linear", from_value, to_value); a linear
    segment starts at from_value and would reach to_value one epoch past its
    last epoch, so a decay-to-zero tail stays positive inside its span.
    """

    segments: list[tuple[int, tuple]] = field(default_factory=list)

    @property
    def total_epochs(self) -> int:
        return sum(span for span, _ in self.segments)

    def lr_at_epoch(self, epoch: int) -> float:
        if not 0 <= epoch < self.total_epochs:
            raise ValueError(
                f"lr_at_epoch: epoch {epoch} outside [0, {self.total_epochs})")
        start = 0
        for span, mode in self.segments:
            if epoch < start + span:
                if mode[0] == "constant":
                    return float(mode[1])
                if mode[0] == "linear":
                    frac = (epoch - start) / span
                    return float(mode[1] + (mode[2] - mode[1]) * frac)
                raise ValueError(f"LrSchedule: unknown segment mode {mode[0]!r}")
            start += span
        raise AssertionError("unreachable")


PRESETS: dict[str, LrSchedule] = {
    # classifier run, 200 epochs: 0.001 x50, 0.0005 x50, 0.0002 x80, linear tail
    "densenet-200": LrSchedule([
        (50, ("constant", 0.001)),
        (50, ("constant", 0.0005)),
        (80, ("constant", 0.0002)),
        (20, ("linear", 0.0002, 0.0)),
    ]),
    # dual-stream run, 200 epochs: 0.0002 x40, 0.00005 x40, 0.00001 x90, tail
    "mmdensenet-200": LrSchedule([
        (40, ("constant", 0.0002)),
        (40, ("constant", 0.00005)),
        (90, ("constant", 0.00001)),
        (30, ("linear", 0.00001, 0.0)),
    ]),
    # aligner run, 300 epochs: 0.0002 x150 then linear decay to zero
    "cyclegan-300": LrSchedule([
        (150, ("constant", 0.0002)),
        (150, ("linear", 0.0002, 0.0)),
    ]),
}


def lr_at_epoch(schedule: LrSchedule | str, epoch: int) -> float:
    if isinstance(schedule, str):
        schedule = resolve_schedule(schedule)
    return schedule.lr_at_epoch(epoch)


def resolve_schedule(name: str, epochs: int | None = None) -> LrSchedule:
    """Look up a preset, or parse 'constant:<lr>' given a run length."""
    if name in PRESETS:
        return PRESETS[name]
    if name.startswith("constant:"):
        if epochs is None:
            raise ValueError("constant schedule needs the epoch count")
        return LrSchedule([(epochs, ("constant", float(name.split(":", 1)[1])))])
    raise ValueError(
        f"unknown schedule {name!r}; presets: {sorted(PRESETS)} or 'constant:<lr>'")
