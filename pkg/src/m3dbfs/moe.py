"""
Sparsely gated mixture of experts over brain-region tokens.

Gating follows the noisy top-k construction: clean logits ``x @ W_g``, plus
in training Gaussian noise scaled by ``softplus(x @ W_noise)``; the top-k
entries are softmaxed and the rest zeroed. Alongside the gates each forward
pass emits a smooth estimate ``P(x, i)`` of the probability that expert
``i`` lands in the top-k under a fresh noise draw, which is what makes the
load-balancing loss differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numcore import (
    Linear,
    Module,
    Parameter,
    Tensor,
    add,
    as_tensor,
    div,
    glorot_uniform,
    masked_softmax,
    matmul,
    mul,
    normal_cdf,
    relu,
    reshape,
    scale,
    scatter_rows,
    softplus,
    sub,
    take_rows,
    tensor_sum,
)

KINDS = ("SC", "FC", "Fusion")


class ExpertMLP(Module):
    """Two-layer perceptron ``d -> d_hidden -> d`` with a relu in between."""

    def __init__(self, d: int, d_hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(d, d_hidden, rng)
        self.fc2 = Linear(d_hidden, d, rng)

    @property
    def width(self) -> int:
        return self.fc1.in_features

    def __call__(self, x) -> Tensor:
        return self.fc2(relu(self.fc1(x)))


class GatingNetwork(Module):
    def __init__(self, d: int, n_experts: int, k: int, rng: np.random.Generator):
        if n_experts < 1:
            raise ValueError("need at least one expert")
        if not 1 <= k <= n_experts:
            raise ValueError(f"top-k must lie in [1, {n_experts}], got {k}")
        self.k = k
        self.w_gate = Parameter(glorot_uniform(rng, d, n_experts))
        self.w_noise = Parameter(glorot_uniform(rng, d, n_experts))

    @property
    def n_experts(self) -> int:
        return self.w_gate.shape[1]

    def reset(self, rng: np.random.Generator) -> None:
        d, e = self.w_gate.shape
        self.w_gate.data = glorot_uniform(rng, d, e)
        self.w_noise.data = glorot_uniform(rng, d, e)


@dataclass(frozen=True)
class RoutingRecord:
    """Routing telemetry of one MoE forward pass over ``T`` tokens.

    ``gates`` and ``load_probs`` are ``(T, E)`` tensors that stay attached to
    the graph so the balance losses can backpropagate through them.
    ``selected`` holds the ``(T, k)`` chosen expert indices; ``tags`` the
    modality of origin of each token (``"SC"`` / ``"FC"``) when known.
    """

    gates: Tensor
    selected: np.ndarray
    load_probs: Tensor
    tags: np.ndarray | None = None
    kind: str | None = None

    @property
    def n_experts(self) -> int:
        return self.gates.shape[1]

    @property
    def importance(self) -> np.ndarray:
        return self.gates.data.sum(axis=0)

    @property
    def load(self) -> np.ndarray:
        return self.load_probs.data.sum(axis=0)

    def counts(self) -> np.ndarray:
        """Number of tokens dispatched to each expert."""
        return np.bincount(self.selected.reshape(-1), minlength=self.n_experts)


def _top_k_mask(logits: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(-logits, axis=1, kind="stable")
    mask = np.zeros(logits.shape, dtype=bool)
    np.put_along_axis(mask, order[:, :k], True, axis=1)
    return order, mask


def _pick(x: Tensor, cols: np.ndarray) -> Tensor:
    """Entry ``x[t, cols[t]]`` of every row, as a ``(T, 1)`` column."""
    onehot = np.zeros(x.shape)
    onehot[np.arange(x.shape[0]), cols] = 1.0
    return tensor_sum(mul(x, onehot), axis=1, keepdims=True)


def gate_forward(g: GatingNetwork, x, train: bool, rng: np.random.Generator | None = None):
    """Route tokens to experts.

    Parameters
    ----------
    x : Tensor
        One token ``(d,)`` or a batch ``(T, d)``.
    train : bool
        Add gating noise and compute the smooth load estimate. Inference is
        noise-free and reports the hard selection indicator as load.

    Returns
    -------
    gates, selected, load_probs
        Shapes ``(T, E)``, ``(T, k)``, ``(T, E)``; leading axis dropped for a
        single token.
    """
    x = as_tensor(x)
    single = x.ndim == 1
    if single:
        x = reshape(x, (1, -1))
    if x.shape[1] != g.w_gate.shape[0]:
        raise ShapeError(f"gate expects width {g.w_gate.shape[0]}, got {x.shape[1]}")
    k, n_exp = g.k, g.n_experts
    if k > n_exp:
        raise ValueError(f"top-k {k} exceeds expert count {n_exp}")
    clean = matmul(x, g.w_gate)
    if train:
        if rng is None:
            raise ValueError("training-mode gating needs a random generator")
        std = softplus(matmul(x, g.w_noise))
        eps = rng.standard_normal(clean.shape)
        logits = add(clean, mul(std, eps))
    else:
        logits = clean
    order, mask = _top_k_mask(logits.data, k)
    gates = masked_softmax(logits, mask)
    selected = np.sort(order[:, :k], axis=1)

    if train and k < n_exp:
        # threshold an expert must beat: the best excluded logit when it is
        # in the top-k, the k-th best logit when it is not
        thr_in = _pick(logits, order[:, k])
        thr_out = _pick(logits, order[:, k - 1])
        p_in = normal_cdf(div(sub(clean, thr_in), std))
        p_out = normal_cdf(div(sub(clean, thr_out), std))
        inside = mask.astype(np.float64)
        load = add(mul(p_in, inside), mul(p_out, 1.0 - inside))
    else:
        load = Tensor(mask.astype(np.float64))

    if single:
        return reshape(gates, (-1,)), selected[0], reshape(load, (-1,))
    return gates, selected, load


class MoEBlock(Module):
    """``E`` experts plus a gate, applied token-wise with sparse dispatch."""

    def __init__(self, kind: str, d: int, d_hidden: int, n_experts: int, k: int,
                 rng: np.random.Generator):
        if kind not in KINDS:
            raise ValueError(f"unknown MoE kind {kind!r}")
        self.kind = kind
        self.experts = [ExpertMLP(d, d_hidden, rng) for _ in range(n_experts)]
        self.gate = GatingNetwork(d, n_experts, k, rng)

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    @property
    def width(self) -> int:
        return self.experts[0].width

    def __call__(self, h, train: bool = False, rng=None, tags=None):
        return moe_forward(self, h, train, rng, tags)


def moe_forward(b: MoEBlock, h, train: bool = False, rng=None, tags=None):
    """Mix expert outputs per token: ``y = sum_i gate_i(x) * expert_i(x)``.

    Only experts with a nonzero gate are evaluated, on the rows routed to them.
    """
    h = as_tensor(h)
    if h.ndim != 2 or h.shape[1] != b.width:
        raise ShapeError(f"MoE block of width {b.width} got tokens of shape {h.shape}")
    gates, selected, load = gate_forward(b.gate, h, train, rng)
    n_tokens, n_exp = gates.shape
    out = None
    for i, expert in enumerate(b.experts):
        rows = np.flatnonzero((selected == i).any(axis=1))
        if rows.size == 0:
            continue
        e_col = np.zeros((n_exp, 1))
        e_col[i, 0] = 1.0
        weight = matmul(take_rows(gates, rows), e_col)
        part = scatter_rows(mul(expert(take_rows(h, rows)), weight), rows, n_tokens)
        out = part if out is None else add(out, part)
    tags = None if tags is None else np.asarray(tags)
    return out, RoutingRecord(gates, selected, load, tags, b.kind)


def cv_squared(values) -> float:
    """Squared coefficient of variation (population std over mean); 0 when the sum is 0.

    Evaluated as ``E * sum(v^2) / sum(v)^2 - 1``, which is exact for the
    constant and one-hot cases (``0`` and ``E - 1``).
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError("cv_squared of an empty vector")
    total = v.sum()
    if total == 0:
        return 0.0
    return max(0.0, float(v.size * np.dot(v, v) / (total * total) - 1.0))


def _cv_squared_tensor(v: Tensor) -> Tensor:
    total = tensor_sum(v)
    if total.item() == 0:
        return Tensor(0.0)
    ratio = div(tensor_sum(mul(v, v)), mul(total, total))
    return sub(scale(ratio, float(v.size)), 1.0)


def importance_loss(r: RoutingRecord) -> Tensor:
    return _cv_squared_tensor(tensor_sum(r.gates, axis=0))


def load_loss(r: RoutingRecord) -> Tensor:
    return _cv_squared_tensor(tensor_sum(r.load_probs, axis=0))


def balance_loss(records) -> Tensor:
    """Average of ``(importance + load) / 2`` over the given records."""
    records = list(records)
    if not records:
        return Tensor(0.0)
    total = None
    for r in records:
        term = scale(add(importance_loss(r), load_loss(r)), 0.5)
        total = term if total is None else add(total, term)
    return scale(total, 1.0 / len(records))


def init_experts_from(b: MoEBlock, source, rng: np.random.Generator | None = None) -> None:
    """Clone one expert's weights into every expert of ``b`` and re-draw the gate.

    ``source`` is an :class:`ExpertMLP` or its ``state_dict``.
    """
    state = source.state_dict() if isinstance(source, ExpertMLP) else dict(source)
    for expert in b.experts:
        expert.load_state_dict(state)
    if rng is not None:
        b.gate.reset(rng)
