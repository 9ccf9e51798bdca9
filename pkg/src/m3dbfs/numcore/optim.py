"""Adam with classic (coupled) L2 weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import M3DError
from .nn import Parameter


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(
    params,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """Apply one Adam update in place.

    ``params`` is a sequence of :class:`Parameter` or ``(name, Parameter)``
    pairs; moment buffers are keyed by name when given, otherwise by position.
    Frozen parameters are left untouched. The weight-decay term is added to
    the gradient before the moment updates.
    """
    b1, b2 = betas
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i, item in enumerate(params):
        key, p = item if isinstance(item, tuple) else (i, item)
        if getattr(p, "frozen", False):
            continue
        if not p.requires_grad or p.grad is None:
            raise M3DError(f"missing gradient on unfrozen parameter {key!r}")
        g = p.grad
        if weight_decay:
            g = g + weight_decay * p.data
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p.data)
            state.v[key] = np.zeros_like(p.data)
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


class Adam:
    """Thin stateful wrapper around :func:`adam_step` for a module's parameters."""

    def __init__(self, named_params, lr=0.005, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.params = [
            item if isinstance(item, tuple) else (str(i), item)
            for i, item in enumerate(named_params)
        ]
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(
            [(n, p) for n, p in self.params if isinstance(p, Parameter)],
            self.state,
            self.lr,
            self.weight_decay,
            self.betas,
            self.eps,
        )
