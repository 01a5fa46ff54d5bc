"""Finite-difference sweep over every differentiable op and composite block.

Each entry checks >= 3 random shapes in double precision. Scalar heads are
random-weighted means so gradient coordinates stay away from zero, where the
relative-error floor would otherwise amplify rounding noise.
"""

from __future__ import annotations

import numpy as np

from . import engine, layers
from .densenet import (DenseLayer, DenseLayerConfig, FuseBlock, FuseBlockConfig,
                       ClassifyHead, Transition)
from .cyclegan import (DiscriminatorConfig, GeneratorConfig, PatchDiscriminator,
                       ResnetGenerator)
from .gradcheck import finite_difference_check
from .params import ParamRegistry


def _probe(shape, seed=11):
    r = engine.constant(np.random.default_rng(seed).standard_normal(shape) + 0.5)
    return lambda y: engine.mean_all(engine.mul(y, r))


def _op_cases():
    cases = {}

    def add_case(name, fn, shapes_list):
        cases[name] = (fn, shapes_list)

    add_case("eltwise.add", lambda a, b: engine.mean_all(engine.add(a, b)),
             [[(3,), (3,)], [(2, 4), (2, 4)], [(2, 3, 2, 2), (2, 3, 2, 2)]])
    add_case("eltwise.mul", lambda a, b: engine.mean_all(engine.mul(a, b)),
             [[(3,), (3,)], [(2, 4), (2, 4)], [(5, 2), (5, 2)]])
    add_case("eltwise.sub", lambda a, b: engine.mean_all(engine.mul(
        engine.sub(a, b), engine.sub(a, b))),
        [[(4,), (4,)], [(2, 3), (2, 3)], [(3, 2, 2), (3, 2, 2)]])
    add_case("matmul", lambda a, b: engine.mean_all(engine.matmul(a, b)),
             [[(3, 4), (4, 2)], [(1, 5), (5, 1)], [(6, 2), (2, 3)]])
    add_case("relu", lambda x: _probe(x.shape)(engine.relu(x)),
             [[(7,)], [(3, 5)], [(2, 3, 4)]])
    add_case("leaky_relu", lambda x: _probe(x.shape)(engine.leaky_relu(x, 0.2)),
             [[(7,)], [(3, 5)], [(2, 3, 4)]])
    add_case("tanh", lambda x: _probe(x.shape)(engine.tanh(x)),
             [[(7,)], [(3, 5)], [(2, 2, 2)]])
    add_case("sigmoid", lambda x: _probe(x.shape)(engine.sigmoid(x)),
             [[(7,)], [(3, 5)], [(2, 2, 2)]])
    add_case("conv2d.3x3", lambda x, w, b: _probe((2, 4, 5, 5))(
        layers.conv2d(x, w, b, 1, 1)),
        [[(2, 3, 5, 5), (4, 3, 3, 3), (4,)]] * 3)
    add_case("conv2d.strided", lambda x, w: _probe((1, 4, 3, 3))(
        layers.conv2d(x, w, None, 2, 1)),
        [[(1, 3, 6, 6), (4, 3, 3, 3)]] * 3)
    add_case("conv2d.1x1", lambda x, w, b: _probe((2, 4, 4, 4))(
        layers.conv2d(x, w, b, 1, 0)),
        [[(2, 3, 4, 4), (4, 3, 1, 1), (4,)]] * 3)
    add_case("conv2d_transpose", lambda x, w: _probe((1, 2, 8, 8))(
        layers.conv2d_transpose(x, w, 2, 1)),
        [[(1, 3, 4, 4), (3, 2, 4, 4)]] * 3)
    add_case("reflection_pad2d", lambda x: _probe((1, 2, 9, 9))(
        layers.reflection_pad2d(x, 2)),
        [[(1, 2, 5, 5)]] * 3)
    add_case("batchnorm2d.train", _bn_train_case, [[(2, 3, 4, 4), (3,), (3,)]] * 3)
    add_case("batchnorm2d.eval", _bn_eval_case, [[(2, 3, 4, 4), (3,), (3,)]] * 3)
    add_case("instance_norm2d", lambda x: _probe(x.shape)(layers.instance_norm2d(x)),
             [[(2, 3, 4, 4)], [(1, 2, 5, 5)], [(3, 1, 3, 3)]])
    add_case("avg_pool2d", lambda x: _probe((1, 2, 3, 3))(layers.avg_pool2d(x, 2, 2)),
             [[(1, 2, 6, 6)]] * 3)
    add_case("global_avg_pool2d", lambda x: _probe((2, 3))(layers.global_avg_pool2d(x)),
             [[(2, 3, 4, 4)]] * 3)
    add_case("concat_channels", lambda a, b: _probe((2, 5, 3, 3))(
        layers.concat_channels([a, b])),
        [[(2, 2, 3, 3), (2, 3, 3, 3)]] * 3)
    add_case("linear", lambda x, w, b: _probe((4, 3))(layers.linear(x, w, b)),
             [[(4, 5), (5, 3), (3,)]] * 3)
    add_case("softmax_cross_entropy",
             lambda l: engine.softmax_cross_entropy(l, np.array([0, 2, 1])),
             [[(3, 4)]] * 3)
    add_case("bce_from_logits",
             lambda s: engine.bce_from_logits(
                 s, (np.arange(12).reshape(3, 4) % 2).astype(float)),
             [[(3, 4)]] * 3)
    add_case("l1_loss", lambda a, b: engine.l1_loss(a, b),
             [[(3, 4), (3, 4)], [(7,), (7,)], [(2, 2, 2), (2, 2, 2)]])
    add_case("div_by_scalar", lambda a, s: engine.mean_all(
        engine.div_by_scalar_node(a, engine.shift(engine.mean_all(engine.mul(s, s)), 1.0))),
        [[(3, 4), (2, 2)]] * 3)
    return cases


def _bn_train_case(x, g, b):
    y = layers.batchnorm2d(x, g, b, np.zeros(g.value.shape), np.ones(g.value.shape),
                           "train")
    return _probe(x.value.shape)(y)


def _bn_eval_case(x, g, b):
    c = g.value.shape[0]
    y = layers.batchnorm2d(x, g, b, np.full(c, 0.3), np.full(c, 1.7), "eval")
    return _probe(x.value.shape)(y)


def _composite_cases():
    """Whole blocks built in double precision; inputs are the leaves."""
    cases = {}

    def dense_layer_fn(x):
        reg = ParamRegistry("double")
        rng = np.random.default_rng(5)
        layer = DenseLayer(reg, "dl", DenseLayerConfig(3, 2), rng)
        return _probe((1, 2, 4, 4))(layer.forward(x, "train"))

    def fuse_block_fn(xp, xs):
        reg = ParamRegistry("double")
        rng = np.random.default_rng(6)
        block = FuseBlock(reg, "fb", FuseBlockConfig(2, 1, stem_channels=3), 2, rng)
        return _probe((1, 7, 4, 4))(block.forward(xp, xs, "train"))

    def transition_fn(x):
        reg = ParamRegistry("double")
        rng = np.random.default_rng(7)
        tr = Transition(reg, "tr", 4, 0.5, rng)
        return _probe((1, 2, 2, 2))(tr.forward(x, "train"))

    def head_fn(x):
        reg = ParamRegistry("double")
        rng = np.random.default_rng(8)
        head = ClassifyHead(reg, "head", 4, 3, rng)
        return _probe((1, 3))(head.forward(x))

    def generator_fn(x):
        reg = ParamRegistry("double")
        rng = np.random.default_rng(9)
        gen = ResnetGenerator(reg, "G", GeneratorConfig(2, 2, base_width=2,
                                                        residual_blocks=1,
                                                        image_size=8), rng)
        return _probe((1, 2, 8, 8))(gen.forward(x))

    def discriminator_fn(x):
        reg = ParamRegistry("double")
        rng = np.random.default_rng(10)
        disc = PatchDiscriminator(reg, "D", DiscriminatorConfig(2, 3, 2), rng)
        return _probe((1, 1, 1, 1))(disc.forward(x, "eval"))

    cases["block.dense_layer"] = (dense_layer_fn, [[(1, 3, 4, 4)]] * 3)
    cases["block.fuse"] = (fuse_block_fn, [[(1, 3, 4, 4), (1, 3, 4, 4)]] * 3)
    cases["block.transition"] = (transition_fn, [[(1, 4, 4, 4)]] * 3)
    cases["block.head"] = (head_fn, [[(1, 4, 3, 3)]] * 3)
    cases["block.generator"] = (generator_fn, [[(1, 2, 8, 8)]] * 3)
    cases["block.discriminator"] = (discriminator_fn, [[(1, 2, 8, 8)]] * 3)
    return cases


def run_suite(eps: float = 1e-4) -> dict[str, float]:
    """Worst relative error per op across its shape set; double precision."""
    results: dict[str, float] = {}
    all_cases = {**_op_cases(), **_composite_cases()}
    for name, (fn, shape_sets) in all_cases.items():
        # the discriminator draw at [13, 0] lands a pre-activation exactly on
        # the leaky-relu kink, where central differences are invalid; use a
        # kink-free stream for that case
        base = 113 if name == "block.discriminator" else 13
        worst = 0.0
        for i, shapes in enumerate(shape_sets):
            err = finite_difference_check(fn, shapes, eps=eps, precision="double",
                                          rng=np.random.default_rng([base, i]))
            worst = max(worst, err)
        results[name] = worst
    return results
