"""Named-parameter registry and weight initializers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Node, as_dtype


@dataclass
class Parameter:
    name: str
    node: Node
    trainable: bool = True


class ParamRegistry:
    """Ordered mapping of dotted names to parameters.

    Iteration follows insertion order, which makes checkpoints and optimizer
    state deterministic. Non-trainable entries hold persistent buffers
    (batch-norm running stats, spectral-norm power-iteration vectors).
    """

    def __init__(self, dtype="single"):
        self.dtype = as_dtype(dtype)
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value: np.ndarray, trainable: bool = True,
            cast: bool = True) -> Node:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        dtype = self.dtype if cast else np.asarray(value).dtype
        node = Node(np.ascontiguousarray(value, dtype=dtype))
        self._params[name] = Parameter(name, node, trainable)
        return node

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self):
        return iter(self._params.values())

    def names(self) -> list[str]:
        return list(self._params)

    def trainable(self) -> list[Parameter]:
        return [p for p in self._params.values() if p.trainable]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.node.grad = None

    def num_scalars(self, trainable_only: bool = True) -> int:
        return sum(p.node.value.size for p in self._params.values()
                   if p.trainable or not trainable_only)

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(p.name, p.node.value) for p in self._params.values()]

    def load_values(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        """Copy values in by name; shapes must match the existing nodes."""
        unused = set(arrays)
        for p in self._params.values():
            if p.name not in arrays:
                if strict:
                    raise KeyError(f"checkpoint is missing parameter {p.name!r}")
                continue
            src = arrays[p.name]
            if src.shape != p.node.value.shape:
                raise ValueError(
                    f"shape mismatch for {p.name!r}: checkpoint {src.shape} "
                    f"vs model {p.node.value.shape}")
            np.copyto(p.node.value, src.astype(p.node.value.dtype, copy=False))
            unused.discard(p.name)
        if strict and unused:
            raise KeyError(f"checkpoint has unknown parameters: {sorted(unused)[:5]}")


def init_normal(rng: np.random.Generator, shape, std: float = 0.02, mean: float = 0.0):
    return rng.normal(mean, std, size=shape)


def init_he(rng: np.random.Generator, shape, fan_in: int):
    """Kaiming-normal for ReLU stacks: std = sqrt(2 / fan_in)."""
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
