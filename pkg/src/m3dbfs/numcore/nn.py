"""Parameters, modules and initializers on top of :mod:`.tensor`."""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, add, matmul, reshape


class Parameter(Tensor):
    """A learnable tensor with a freeze flag.

    Frozen parameters do not record gradients and are skipped by the
    optimizer.
    """

    def __init__(self, data, name: str | None = None, frozen: bool = False):
        super().__init__(data, requires_grad=not frozen, name=name)
        self.frozen = bool(frozen)

    def freeze(self) -> None:
        self.frozen = True
        self.requires_grad = False
        self._grad = None

    def unfreeze(self) -> None:
        self.frozen = False
        self.requires_grad = True

    def __repr__(self):
        return f"Parameter(shape={self.shape}, frozen={self.frozen})"


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Module:
    """Container that discovers parameters held in attributes, lists and submodules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            yield from _walk(value, prefix + name)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if not p.frozen]

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.freeze()
        return self

    def unfreeze(self) -> "Module":
        for p in self.parameters():
            p.unfreeze()
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state, strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise ShapeError(f"state mismatch; missing={missing} unexpected={extra}")
        for name, value in state.items():
            if name not in own:
                continue
            value = np.asarray(value, dtype=np.float64)
            if value.shape != own[name].shape:
                raise ShapeError(
                    f"{name}: checkpoint shape {value.shape} != model shape {own[name].shape}"
                )
            own[name].data = value.copy()


def _walk(value, name):
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")
    elif isinstance(value, dict):
        for key, item in value.items():
            yield from _walk(item, f"{name}.{key}")


class Linear(Module):
    """Affine map ``x @ weight + bias`` applied row-wise."""

    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(glorot_uniform(rng, fan_in, fan_out))
        self.bias = Parameter(np.zeros(fan_out)) if bias else None

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"Linear expects width {self.in_features}, got {x.shape}")
        out = matmul(x if x.ndim == 2 else reshape(x, (1, -1)), self.weight)
        if self.bias is not None:
            out = add(out, self.bias)
        return out if x.ndim == 2 else reshape(out, (-1,))

