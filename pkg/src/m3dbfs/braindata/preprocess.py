"""Matrix-level preprocessing: Pearson FC, edge thresholding, graph assembly."""

from __future__ import annotations

import math
import warnings

import numpy as np

from ..errors import PreprocessingError, ShapeError
from .types import FC, FUNCTIONAL, SC, STRUCTURAL, BrainGraph, ConnectivityMatrix, TimeSeries


def pearson_fc(ts: TimeSeries) -> ConnectivityMatrix:
    """Region-by-region Pearson correlation of a time series."""
    x = ts.values
    centered = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=1))
    for i, nrm in enumerate(norms):
        if nrm == 0 or not np.isfinite(nrm):
            raise PreprocessingError(f"region {i} has a constant time series")
    z = centered / norms[:, None]
    r = z @ z.T
    r = 0.5 * (r + r.T)
    np.clip(r, -1.0, 1.0, out=r)
    np.fill_diagonal(r, 1.0)
    return ConnectivityMatrix(r, FUNCTIONAL)


def threshold_proportional(m: ConnectivityMatrix, density: float) -> np.ndarray:
    """Binary adjacency keeping the ``ceil(density * P)`` strongest pairs by magnitude.

    ``P = N(N-1)/2`` is the number of off-diagonal pairs. Ties in magnitude
    go to the lexicographically smaller ``(i, j)``.
    """
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    n = m.size
    iu, ju = np.triu_indices(n, k=1)
    pairs = len(iu)
    # guard against products like 0.2 * 435 landing a hair above an integer
    keep = min(pairs, math.ceil(density * pairs - 1e-9))
    mag = np.abs(m.values[iu, ju])
    order = np.lexsort((ju, iu, -mag))[:keep]
    adj = np.zeros((n, n))
    adj[iu[order], ju[order]] = 1.0
    return adj + adj.T


def threshold_absolute(m: ConnectivityMatrix, t: float) -> np.ndarray:
    """Binary adjacency with an edge wherever the value strictly exceeds ``t``."""
    adj = (m.values > t).astype(np.float64)
    np.fill_diagonal(adj, 0.0)
    return np.maximum(adj, adj.T)


def build_graph(m: ConnectivityMatrix, adjacency, log1p: bool = False) -> BrainGraph:
    """Pair a thresholded adjacency with node features taken from the matrix rows."""
    adjacency = np.asarray(adjacency, dtype=np.float64)
    if adjacency.shape != m.values.shape:
        raise ShapeError(f"adjacency {adjacency.shape} vs matrix {m.values.shape}")
    features = m.values.copy()
    if log1p:
        if m.kind != STRUCTURAL:
            raise PreprocessingError("log1p scaling only applies to structural counts")
        features = np.log1p(features)
    if not np.any(features):
        warnings.warn("connectivity matrix is all zero; graph has no edges", stacklevel=2)
    modality = SC if m.kind == STRUCTURAL else FC
    return BrainGraph(modality, adjacency, features, matrix=m)


def fiber_matrix(raw, tol: float = 1e-6) -> ConnectivityMatrix:
    """Validate and symmetrize a raw fiber-count matrix."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise PreprocessingError(f"fiber matrix must be square, got {raw.shape}")
    if np.any(raw < 0):
        i, j = np.argwhere(raw < 0)[0]
        raise PreprocessingError(f"fiber matrix has a negative entry at ({i}, {j})")
    asym = np.max(np.abs(raw - raw.T), initial=0.0)
    if asym > tol:
        raise PreprocessingError(f"fiber matrix asymmetric by {asym:.3g} (tolerance {tol:g})")
    sym = 0.5 * (raw + raw.T)
    np.fill_diagonal(sym, 0.0)
    return ConnectivityMatrix(sym, STRUCTURAL)


def graphs_from_matrices(
    sc: ConnectivityMatrix,
    fc: ConnectivityMatrix,
    fc_density: float = 0.2,
    sc_threshold: float = 0.0,
    sc_log1p: bool = False,
) -> tuple[BrainGraph, BrainGraph]:
    sc_graph = build_graph(sc, threshold_absolute(sc, sc_threshold), log1p=sc_log1p)
    fc_graph = build_graph(fc, threshold_proportional(fc, fc_density))
    return sc_graph, fc_graph
