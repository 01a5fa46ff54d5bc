"""Thin layer classes binding parameters in a registry to the functional ops.

Each layer registers its tensors under a dotted prefix at construction time
and is a plain callable afterwards; there is no module tree, the models own
the composition.
"""

from __future__ import annotations

import numpy as np

from . import engine, layers
from .engine import Node
from .params import ParamRegistry, init_he, init_normal


def _init_weight(kind: str, rng: np.random.Generator, shape, fan_in: int):
    if kind == "he":
        return init_he(rng, shape, fan_in)
    if kind == "gauss002":
        return init_normal(rng, shape, std=0.02)
    raise ValueError(f"unknown init {kind!r}")


class Conv2d:
    def __init__(self, reg: ParamRegistry, name: str, in_ch: int, out_ch: int,
                 k: int, stride: int = 1, padding: int = 0, bias: bool = False,
                 init: str = "he", rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.stride, self.padding = stride, padding
        fan_in = in_ch * k * k
        self.weight = reg.add(f"{name}.weight",
                              _init_weight(init, rng, (out_ch, in_ch, k, k), fan_in))
        self.bias = reg.add(f"{name}.bias", np.zeros(out_ch)) if bias else None

    def __call__(self, x: Node) -> Node:
        return layers.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d:
    def __init__(self, reg: ParamRegistry, name: str, in_ch: int, out_ch: int,
                 k: int, stride: int = 1, padding: int = 0,
                 init: str = "he", rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.stride, self.padding = stride, padding
        self.weight = reg.add(f"{name}.weight",
                              _init_weight(init, rng, (in_ch, out_ch, k, k), in_ch * k * k))

    def __call__(self, x: Node) -> Node:
        return layers.conv2d_transpose(x, self.weight, self.stride, self.padding)


class BatchNorm2d:
    def __init__(self, reg: ParamRegistry, name: str, channels: int,
                 eps: float = 1e-5, momentum: float = 0.1):
        self.eps, self.momentum = eps, momentum
        self.gamma = reg.add(f"{name}.gamma", np.ones(channels))
        self.beta = reg.add(f"{name}.beta", np.zeros(channels))
        self.running_mean = reg.add(f"{name}.running_mean", np.zeros(channels),
                                    trainable=False).value
        self.running_var = reg.add(f"{name}.running_var", np.ones(channels),
                                   trainable=False).value

    def __call__(self, x: Node, mode: str) -> Node:
        return layers.batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                                  self.running_var, mode, self.eps, self.momentum)


class InstanceNorm2d:
    def __init__(self, eps: float = 1e-5):
        self.eps = eps

    def __call__(self, x: Node, mode: str = "train") -> Node:
        return layers.instance_norm2d(x, self.eps)


class Linear:
    def __init__(self, reg: ParamRegistry, name: str, in_dim: int, out_dim: int,
                 init: str = "he", rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.weight = reg.add(f"{name}.weight",
                              _init_weight(init, rng, (in_dim, out_dim), in_dim))
        self.bias = reg.add(f"{name}.bias", np.zeros(out_dim))

    def __call__(self, x: Node) -> Node:
        return layers.linear(x, self.weight, self.bias)


class SpectralNormConv2d:
    """Convolution whose weight is divided by its estimated top singular value.

    The estimate comes from persistent one-vector power iteration over the
    (out_channels, rest) reshape of the kernel; the division is part of the
    graph, so gradients see sigma = u.T W v with u, v held constant. Train
    mode refreshes u in place, eval mode only reads it.
    """

    def __init__(self, reg: ParamRegistry, name: str, in_ch: int, out_ch: int,
                 k: int, stride: int = 1, padding: int = 0, bias: bool = True,
                 init: str = "gauss002", rng: np.random.Generator | None = None,
                 power_iterations: int = 1):
        rng = rng or np.random.default_rng(0)
        self.stride, self.padding = stride, padding
        self.power_iterations = power_iterations
        self.out_ch = out_ch
        self.weight = reg.add(f"{name}.weight",
                              _init_weight(init, rng, (out_ch, in_ch, k, k), in_ch * k * k))
        self.bias = reg.add(f"{name}.bias", np.zeros(out_ch)) if bias else None
        u0 = rng.standard_normal(out_ch)
        self.u = reg.add(f"{name}.sn_u", u0 / np.linalg.norm(u0), trainable=False).value

    def normalized_weight(self, mode: str) -> Node:
        w_sn, _ = spectral_normalize(self.weight, self.u,
                                     iterations=self.power_iterations,
                                     update=(mode == "train"))
        return w_sn

    def __call__(self, x: Node, mode: str) -> Node:
        return layers.conv2d(x, self.normalized_weight(mode), self.bias,
                             self.stride, self.padding)


def _l2normalize(v: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    return v / (np.linalg.norm(v) + eps)


def spectral_normalize(weight: Node, u: np.ndarray, iterations: int = 1,
                       update: bool = True):
    """Return (weight / sigma_hat, sigma_hat) using power-iterated u, v.

    ``u`` is the persistent left vector, refreshed in place when ``update``.
    A zero weight matrix is returned unchanged.
    """
    wv = weight.value
    w2 = wv.reshape(wv.shape[0], -1)
    u_loc = u.copy()
    v_loc = None
    for _ in range(max(1, iterations)):
        v_loc = _l2normalize(w2.T @ u_loc)
        u_loc = _l2normalize(w2 @ v_loc)
    sigma_val = float(u_loc @ w2 @ v_loc)
    if sigma_val == 0.0:
        return weight, 0.0
    if update:
        np.copyto(u, u_loc)
    u_node = engine.Node(u_loc.reshape(1, -1).astype(wv.dtype))
    v_node = engine.Node(v_loc.reshape(-1, 1).astype(wv.dtype))
    w2_node = engine.reshape(weight, (wv.shape[0], -1))
    sigma = engine.matmul(engine.matmul(u_node, w2_node), v_node)
    w_sn = engine.div_by_scalar_node(w2_node, sigma)
    return engine.reshape(w_sn, wv.shape), sigma_val
