"""Expert-routing reports over a whole dataset at inference (no gate noise).

Report A: for every MoE block, the fraction of routed token slots each
expert receives. Report B: for every fusion-MoE expert, the share of its
tokens that came from SC versus FC regions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..braindata import Dataset
from ..moe import KINDS
from .models import Stage3Model, routing_records

REPORT_A_HEADER = ("kind", "layer", "expert", "tokens", "fraction")
REPORT_B_HEADER = ("layer", "expert", "tokens", "sc_fraction", "fc_fraction")


@dataclass
class RoutingCounts:
    """Token-slot counts accumulated over every batch.

    ``dispatch[kind]`` is ``(layers, E)``; ``by_origin`` is ``(layers, E, 2)``
    with SC then FC origin counts for the fusion blocks.
    """

    dispatch: dict
    by_origin: np.ndarray


def routing_counts(model: Stage3Model, data: Dataset, batch_size: int = 64) -> RoutingCounts:
    dispatch = {}
    by_origin = None
    for batch in routing_records(model, data, batch_size):
        for kind in KINDS:
            counts = np.array([r.counts() for r in batch[kind]])
            dispatch[kind] = dispatch.get(kind, 0) + counts
        fusion = batch["Fusion"]
        origin = np.zeros((len(fusion), fusion[0].n_experts, 2), dtype=np.int64)
        for layer, rec in enumerate(fusion):
            for col, tag in enumerate(("SC", "FC")):
                chosen = rec.selected[rec.tags == tag].reshape(-1)
                origin[layer, :, col] = np.bincount(chosen, minlength=rec.n_experts)
        by_origin = origin if by_origin is None else by_origin + origin
    return RoutingCounts(dispatch, by_origin)


def report_a(counts: RoutingCounts) -> list[tuple]:
    rows = []
    for kind in KINDS:
        for layer, per_expert in enumerate(counts.dispatch[kind]):
            total = per_expert.sum()
            for e, c in enumerate(per_expert):
                rows.append((kind, layer, e, int(c), c / total))
    return rows


def report_b(counts: RoutingCounts) -> list[tuple]:
    """Experts that received no fusion tokens get NaN fractions."""
    rows = []
    for layer, per_expert in enumerate(counts.by_origin):
        for e, (sc, fc) in enumerate(per_expert):
            total = sc + fc
            if total:
                rows.append((layer, e, int(total), sc / total, fc / total))
            else:
                rows.append((layer, e, 0, math.nan, math.nan))
    return rows


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    return str(v)


def rows_csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(_cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"
