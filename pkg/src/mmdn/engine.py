"""Reverse-mode automatic differentiation on numpy arrays.

A ``Node`` wraps an ndarray value together with an accumulated gradient and a
backward rule. Graphs are built eagerly by the op functions below and walked
once, in reverse topological order, by :func:`backward`. Values with no graph
attachment (constants, detached nodes) are plain leaves.

Only the broadcasting the backward rules can audit is allowed: bias vectors
over rows/channels inside the layer ops. Everything else requires exact shape
agreement and raises otherwise.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

DTYPES = {"single": np.float32, "double": np.float64}

_grad_enabled = True


def grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    """Disable graph construction; ops return unattached leaf nodes."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def as_dtype(precision) -> np.dtype:
    """Map a precision name ('single'/'double') or dtype-like to a numpy dtype."""
    if isinstance(precision, str):
        try:
            return np.dtype(DTYPES[precision])
        except KeyError:
            raise ValueError(f"unknown precision {precision!r}; expected 'single' or 'double'")
    dt = np.dtype(precision)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}; expected float32 or float64")
    return dt


class Node:
    """One vertex of the backward DAG: a value, its gradient, and parents.

    ``grad`` is allocated lazily and accumulates across backward passes until
    :meth:`zero_grad` resets it. The backward rule receives the upstream
    gradient and returns one array (or None) per parent, in parent order.
    """

    __slots__ = ("value", "grad", "parents", "_backward")

    def __init__(self, value, parents: Sequence["Node"] = (),
                 backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None):
        self.value = np.asarray(value)
        self.grad: np.ndarray | None = None
        if _grad_enabled and (parents or backward):
            self.parents: tuple[Node, ...] = tuple(parents)
            self._backward = backward
        else:
            self.parents = ()
            self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self) -> np.dtype:
        return self.value.dtype

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def detach(self) -> "Node":
        """A new leaf sharing this node's value; gradients stop here."""
        return Node(self.value)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # Operator sugar; scalars are the only non-Node operands accepted.
    def __add__(self, other):
        return shift(self, other) if np.isscalar(other) else add(self, other)

    def __radd__(self, other):
        return shift(self, other)

    def __sub__(self, other):
        return shift(self, -other) if np.isscalar(other) else sub(self, other)

    def __mul__(self, other):
        return scale(self, other) if np.isscalar(other) else mul(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Node(shape={self.value.shape}, dtype={self.value.dtype})"


def constant(value, dtype=None) -> Node:
    """A leaf node with no parents (inputs, labels, fixed tensors)."""
    arr = np.asarray(value, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return Node(arr)


def _make(value, parents, backward) -> Node:
    if _grad_enabled:
        return Node(value, parents, backward)
    return Node(value)


def _check_same_shape(a: Node, b: Node, op: str) -> None:
    if a.value.shape != b.value.shape:
        raise ValueError(f"{op}: shape mismatch {a.value.shape} vs {b.value.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Node, b: Node) -> Node:
    _check_same_shape(a, b, "add")
    return _make(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    _check_same_shape(a, b, "sub")
    return _make(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Node, b: Node) -> Node:
    _check_same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Node, s) -> Node:
    """Multiply by a python/numpy scalar."""
    s = float(s)
    return _make(a.value * np.asarray(s, dtype=a.value.dtype), (a,), lambda g: (g * s,))


def shift(a: Node, s) -> Node:
    """Add a python/numpy scalar."""
    s = float(s)
    return _make(a.value + np.asarray(s, dtype=a.value.dtype), (a,), lambda g: (g,))


def eltwise(kind: str, a: Node, b=None) -> Node:
    """Dispatch the elementwise op family by name."""
    if kind == "add":
        return add(a, b)
    if kind == "sub":
        return sub(a, b)
    if kind == "mul":
        return mul(a, b)
    if kind == "scalar-mul":
        return scale(a, b)
    if kind == "scalar-add":
        return shift(a, b)
    raise ValueError(f"eltwise: unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# linear algebra and shape ops

def matmul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError(f"matmul: expected 2-d operands, got {av.shape} @ {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul: inner dimensions disagree: {av.shape} @ {bv.shape}")

    def bw(g):
        return g @ bv.T, av.T @ g

    return _make(av @ bv, (a, b), bw)


def reshape(a: Node, shape) -> Node:
    old = a.value.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def div_by_scalar_node(a: Node, s: Node) -> Node:
    """a / s with s a one-element node; gradient flows into both operands."""
    if s.value.size != 1:
        raise ValueError(f"div_by_scalar_node: divisor must be scalar, got {s.value.shape}")
    sv = float(s.value.reshape(-1)[0])
    inv = 1.0 / sv

    def bw(g):
        ds = np.asarray(-(g * a.value).sum() * inv * inv,
                        dtype=s.value.dtype).reshape(s.value.shape)
        return g * inv, ds

    return _make(a.value * inv, (a, s), bw)


def sum_all(a: Node) -> Node:
    av = a.value
    return _make(np.asarray(av.sum(), dtype=av.dtype),
                 (a,), lambda g: (np.broadcast_to(g, av.shape).copy(),))


def mean_all(a: Node) -> Node:
    av = a.value
    n = av.size
    return _make(np.asarray(av.mean(), dtype=av.dtype),
                 (a,), lambda g: (np.broadcast_to(g / n, av.shape).astype(av.dtype),))


# ---------------------------------------------------------------------------
# activations

def relu(x: Node) -> Node:
    out = np.maximum(x.value, 0)
    return _make(out, (x,), lambda g: (g * (out > 0),))


def leaky_relu(x: Node, alpha: float = 0.2) -> Node:
    if not 0 <= alpha < 1:
        raise ValueError(f"leaky_relu: alpha must be in [0, 1), got {alpha}")
    v = x.value
    # subgradient at exactly 0 is 0, matching relu's convention
    slope = ((v > 0) * 1.0 + (v < 0) * alpha).astype(v.dtype)
    return _make(v * slope, (x,), lambda g: (g * slope,))


def tanh(x: Node) -> Node:
    t = np.tanh(x.value)
    return _make(t, (x,), lambda g: (g * (1 - t * t),))


def sigmoid(x: Node) -> Node:
    s = _sigmoid_value(x.value)
    return _make(s, (x,), lambda g: (g * s * (1 - s),))


def _sigmoid_value(v: np.ndarray) -> np.ndarray:
    # Stable in both tails.
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def activation(kind: str, x: Node, alpha: float = 0.2) -> Node:
    """Dispatch activations by name; 'leaky-relu' takes the negative slope."""
    if kind == "relu":
        return relu(x)
    if kind == "leaky-relu":
        return leaky_relu(x, alpha)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"activation: unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# losses

def softmax_cross_entropy(logits: Node, labels) -> Node:
    """Mean negative log softmax probability of the integer labels."""
    lv = logits.value
    if lv.ndim != 2:
        raise ValueError(f"softmax_cross_entropy: logits must be (N, C), got {lv.shape}")
    labels = np.asarray(labels)
    n, c = lv.shape
    if labels.shape != (n,):
        raise ValueError(f"softmax_cross_entropy: labels must be ({n},), got {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"softmax_cross_entropy: label out of range [0, {c})")

    shifted = lv - lv.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(n), labels]
    loss = np.asarray((lse - picked).mean(), dtype=lv.dtype)

    def bw(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return _make(loss, (logits,), bw)


def softmax_values(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array (for predictions; no graph)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def bce_from_logits(scores: Node, targets) -> Node:
    """Mean binary cross entropy against {0,1} targets, computed from raw scores.

    Uses the log-sum-exp form max(s,0) - s*t + log(1 + exp(-|s|)), which never
    evaluates a clamped probability.
    """
    sv = scores.value
    t = np.asarray(targets, dtype=sv.dtype)
    if t.shape != sv.shape:
        raise ValueError(f"bce_from_logits: shape mismatch {sv.shape} vs {t.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("bce_from_logits: targets must be 0 or 1")
    per = np.maximum(sv, 0) - sv * t + np.log1p(np.exp(-np.abs(sv)))
    n = sv.size

    def bw(g):
        return ((_sigmoid_value(sv) - t) * (g / n),)

    return _make(np.asarray(per.mean(), dtype=sv.dtype), (scores,), bw)


def l1_loss(a: Node, b: Node) -> Node:
    """Mean absolute difference; the subgradient at ties is 0."""
    _check_same_shape(a, b, "l1_loss")
    diff = a.value - b.value
    n = diff.size

    def bw(g):
        s = np.sign(diff) * (g / n)
        return s, -s

    return _make(np.asarray(np.abs(diff).mean(), dtype=diff.dtype), (a, b), bw)


# ---------------------------------------------------------------------------
# backward pass

def _topo_order(root: Node) -> list[Node]:
    """Parents-before-children ordering of the subgraph reachable from root."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Propagate d(loss)/d(node) to every node reachable from ``loss``.

    Each call pushes a fresh unit seed through the graph and adds the
    contributions into ``node.grad``, so repeated calls accumulate.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    order = _topo_order(loss)
    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            key = id(parent)
            if key in flowing:
                flowing[key] = flowing[key] + pg
            else:
                flowing[key] = pg
