"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import engine
from .engine import Node


def finite_difference_check(fn: Callable[..., Node], input_shapes: Sequence[tuple],
                            eps: float = 1e-5, precision: str = "double",
                            rng: np.random.Generator | None = None,
                            scale: float = 1.0) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn`` takes one leaf Node per entry of ``input_shapes`` and returns a
    scalar Node. The relative error denominator is
    max(|analytic|, |numeric|, 1e-8) per coordinate. Tight tolerances
    (< 1e-3) require double precision.
    """
    rng = rng or np.random.default_rng(0)
    dtype = engine.as_dtype(precision)
    values = [np.ascontiguousarray(rng.standard_normal(s) * scale, dtype=dtype)
              for s in input_shapes]

    leaves = [Node(v.copy()) for v in values]
    out = fn(*leaves)
    if out.value.size != 1:
        raise ValueError("finite_difference_check: fn must return a scalar node")
    engine.backward(out)
    analytic = [np.zeros_like(v) if leaf.grad is None else leaf.grad
                for v, leaf in zip(values, leaves)]

    worst = 0.0
    for idx, base in enumerate(values):
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = _eval(fn, values)
            flat[i] = orig - eps
            f_minus = _eval(fn, values)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * eps)
            a = float(analytic[idx].reshape(-1)[i])
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


def _eval(fn, values) -> float:
    with engine.no_grad():
        return float(fn(*[Node(v.copy()) for v in values]).value)
