"""Parameter containers.

A :class:`Module` owns leaf tensors and child modules as attributes; parameter
names are dotted attribute paths in definition order, which keeps checkpoint
layout and parameter counts stable.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor, get_dtype


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            name = f"{prefix}{key}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def zero_(self) -> "Module":
        """Set every parameter to zero in place."""
        for p in self.parameters():
            p.data[...] = 0
        return self


def param(data, name: str | None = None) -> Tensor:
    return Tensor(np.asarray(data, dtype=get_dtype()), requires_grad=True, name=name)


def conv_init(rng: np.random.Generator, cout: int, cin: int, kh: int = 1, kw: int = 1,
              gain: float = 1.0) -> Tensor:
    """He-style normal init scaled by fan-in."""
    std = gain * np.sqrt(2.0 / (cin * kh * kw))
    return param(rng.standard_normal((cout, cin, kh, kw)) * std)


def zeros(*shape) -> Tensor:
    return param(np.zeros(shape))


def ones(*shape) -> Tensor:
    return param(np.ones(shape))
