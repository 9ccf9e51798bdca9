"""
Model definitions for the three training stages.

All stages share one token pipeline: a GCN encoder per modality, a
projection to token width ``d``, and per-kind stacks of expert layers (SC
tokens, FC tokens, and the row-concatenation of both for fusion). Each
stack applies its layers with a residual connection and a relu between
layers. Stage 2 uses one :class:`ExpertMLP` per layer; stage 3 swaps each
for an :class:`MoEBlock` whose experts start as copies of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..braindata import Dataset
from ..encoders import (
    ClassifierHead,
    GCNEncoder,
    Projection,
    batched_readout,
    graph_operator,
    pooling_matrix,
)
from ..moe import KINDS, ExpertMLP, MoEBlock, RoutingRecord, init_experts_from
from ..numcore import Linear, Module, Tensor, add, concat, matmul, no_grad, relu, row_softmax


@dataclass
class Batch:
    ops_sc: np.ndarray
    ops_fc: np.ndarray
    x_sc: np.ndarray
    x_fc: np.ndarray
    labels: np.ndarray
    ids: list

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def n_regions(self) -> int:
        return self.ops_sc.shape[1]


def collate(samples) -> Batch:
    samples = list(samples)
    return Batch(
        ops_sc=np.stack([graph_operator(s.sc) for s in samples]),
        ops_fc=np.stack([graph_operator(s.fc) for s in samples]),
        x_sc=np.concatenate([s.sc.features for s in samples]),
        x_fc=np.concatenate([s.fc.features for s in samples]),
        labels=np.array([s.label for s in samples], dtype=int),
        ids=[s.id for s in samples],
    )


def iter_batches(data: Dataset, batch_size: int, order=None):
    order = np.arange(len(data)) if order is None else order
    for start in range(0, len(order), batch_size):
        yield collate(data.samples[i] for i in order[start:start + batch_size])


def _encoder(cfg, rng):
    return GCNEncoder(cfg.n_regions, cfg.gcn_hidden, cfg.embed_dim, cfg.gcn_layers, rng)


class UniModalModel(Module):
    def __init__(self, cfg, rng):
        self.encoder = _encoder(cfg, rng)
        self.head = ClassifierHead(cfg.embed_dim, rng)

    def embed(self, ops, x) -> Tensor:
        return self.encoder(ops, x)

    def __call__(self, ops, x):
        """Return (logits, pooled embedding) for a batch."""
        pooled = batched_readout(self.embed(ops, x), ops.shape[0])
        return self.head(pooled), pooled


class Stage1Model(Module):
    stage = 1

    def __init__(self, cfg, rng):
        self.sc = UniModalModel(cfg, rng)
        self.fc = UniModalModel(cfg, rng)

    def branch(self, modality: str) -> UniModalModel:
        return self.sc if modality == "SC" else self.fc

    def logits(self, batch: Batch, modality: str) -> Tensor:
        ops, x = (batch.ops_sc, batch.x_sc) if modality == "SC" else (batch.ops_fc, batch.x_fc)
        return self.branch(modality)(ops, x)[0]


@dataclass
class FusionOutput:
    logits: Tensor
    pooled_sc: Tensor
    pooled_fc: Tensor
    z: dict
    anchor: Tensor | None = None
    records: dict = field(default_factory=dict)


def run_stack(layers, x, train=False, rng=None, tags=None):
    """Residual stack: ``x <- x + layer(x)``, relu between layers."""
    records = []
    last = len(layers) - 1
    for i, layer in enumerate(layers):
        if isinstance(layer, MoEBlock):
            y, rec = layer(x, train=train, rng=rng, tags=tags)
            records.append(rec)
        else:
            y = layer(x)
        x = add(x, y)
        if i < last:
            x = relu(x)
    return x, records


class _FusionBase(Module):
    """Encoders, projections and the two-layer FFN shared by stages 2 and 3."""

    def _build_trunk(self, cfg, rng):
        self.enc_sc = _encoder(cfg, rng)
        self.enc_fc = _encoder(cfg, rng)
        self.proj_sc = Projection(cfg.embed_dim, cfg.token_dim, rng)
        self.proj_fc = Projection(cfg.embed_dim, cfg.token_dim, rng)
        self.ffn_hidden = Linear(3 * cfg.token_dim, cfg.token_dim, rng)
        self.ffn_out = Linear(cfg.token_dim, 2, rng)

    def tokens(self, batch: Batch):
        h_sc = self.enc_sc(batch.ops_sc, batch.x_sc)
        h_fc = self.enc_fc(batch.ops_fc, batch.x_fc)
        t_sc, t_fc = self.proj_sc(h_sc), self.proj_fc(h_fc)
        return h_sc, h_fc, t_sc, t_fc

    def _stacks(self):
        raise NotImplementedError

    def _fuse(self, batch: Batch, train: bool, rng):
        b, n = batch.size, batch.n_regions
        h_sc, h_fc, t_sc, t_fc = self.tokens(batch)
        t_fu = concat([t_sc, t_fc], axis=0)
        tags = np.array(["SC"] * (b * n) + ["FC"] * (b * n))
        pool = pooling_matrix(b, n)
        pool_fu = np.hstack([pool, pool]) * 0.5
        stacks = self._stacks()
        z, records = {}, {}
        for kind, tokens, kind_tags, p in (
            ("SC", t_sc, tags[: b * n], pool),
            ("FC", t_fc, tags[b * n:], pool),
            ("Fusion", t_fu, tags, pool_fu),
        ):
            out, records[kind] = run_stack(stacks[kind], tokens, train, rng, kind_tags)
            z[kind] = matmul(Tensor(p), out)
        pooled_sc = batched_readout(h_sc, b)
        pooled_fc = batched_readout(h_fc, b)
        return pooled_sc, pooled_fc, z, records


class Stage2Model(_FusionBase):
    """Single-expert fusion model: FFN over concat(z_SC, z_FC, z_Fusion)."""

    stage = 2

    def __init__(self, cfg, rng):
        self._build_trunk(cfg, rng)
        self.experts = {
            kind: [ExpertMLP(cfg.token_dim, cfg.d_hidden, rng) for _ in range(cfg.moe_depth)]
            for kind in KINDS
        }

    def _stacks(self):
        return self.experts

    def __call__(self, batch: Batch, train: bool = False, rng=None) -> FusionOutput:
        pooled_sc, pooled_fc, z, records = self._fuse(batch, train, rng)
        joined = concat([z["SC"], z["FC"], z["Fusion"]], axis=1)
        logits = self.ffn_out(relu(self.ffn_hidden(joined)))
        return FusionOutput(logits, pooled_sc, pooled_fc, z)


class Stage3Model(_FusionBase):
    """MoE fine-tuning model.

    The anchor projection and classifier start as copies of the stage-2 FFN
    layers, so at initialization (experts cloned, top-1 routing) the logits
    reproduce stage 2 exactly.
    """

    stage = 3

    def __init__(self, cfg, rng):
        self._build_trunk(cfg, rng)
        self.moe = {
            kind: [
                MoEBlock(kind, cfg.token_dim, cfg.d_hidden, cfg.n_experts, cfg.top_k, rng)
                for _ in range(cfg.moe_depth)
            ]
            for kind in KINDS
        }
        self.anchor = Linear(3 * cfg.token_dim, cfg.token_dim, rng)
        self.classifier = Linear(cfg.token_dim, 2, rng)

    def _stacks(self):
        return self.moe

    def frozen_prefixes(self) -> tuple[str, ...]:
        return ("enc_sc.", "enc_fc.", "proj_sc.", "proj_fc.", "ffn_hidden.", "ffn_out.")

    def init_from_stage2(self, stage2: Stage2Model, rng) -> None:
        trunk = {
            name: value
            for name, value in stage2.state_dict().items()
            if name.startswith(self.frozen_prefixes())
        }
        self.load_state_dict(trunk, strict=False)
        for kind in KINDS:
            for block, expert in zip(self.moe[kind], stage2.experts[kind]):
                init_experts_from(block, expert, rng)
        self.anchor.load_state_dict(stage2.ffn_hidden.state_dict())
        self.classifier.load_state_dict(stage2.ffn_out.state_dict())
        self.freeze_trunk()

    def freeze_trunk(self) -> None:
        for name, p in self.named_parameters():
            if name.startswith(self.frozen_prefixes()):
                p.freeze()

    def __call__(self, batch: Batch, train: bool = False, rng=None) -> FusionOutput:
        pooled_sc, pooled_fc, z, records = self._fuse(batch, train, rng)
        anchor = self.anchor(concat([z["SC"], z["FC"], z["Fusion"]], axis=1))
        logits = self.classifier(relu(anchor))
        return FusionOutput(logits, pooled_sc, pooled_fc, z, anchor, records)


def predict_proba(model, data: Dataset, batch_size: int = 64, modality: str | None = None):
    """Class probabilities ``(n, 2)`` in inference mode."""
    out = []
    with no_grad():
        for batch in iter_batches(data, batch_size):
            if isinstance(model, Stage1Model):
                logits = model.logits(batch, modality or "SC")
            else:
                logits = model(batch, train=False).logits
            out.append(row_softmax(logits).data)
    return np.concatenate(out)


def routing_records(model: Stage3Model, data: Dataset, batch_size: int = 64) -> list[dict]:
    """Inference-mode routing records, one ``{kind: [record per layer]}`` per batch."""
    result = []
    with no_grad():
        for batch in iter_batches(data, batch_size):
            result.append(model(batch, train=False).records)
    return result


__all__ = [
    "Batch",
    "FusionOutput",
    "RoutingRecord",
    "Stage1Model",
    "Stage2Model",
    "Stage3Model",
    "UniModalModel",
    "collate",
    "iter_batches",
    "predict_proba",
    "routing_records",
    "run_stack",
]
