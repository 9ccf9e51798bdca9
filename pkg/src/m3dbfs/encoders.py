"""GCN encoders, READOUT pooling, classifier heads and token projections."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .numcore import Linear, Module, Parameter, Tensor, blockdiag_matmul, glorot_uniform
from .numcore import matmul, mean_rows, relu


def normalized_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Symmetric normalization with self-loops: D^-1/2 (A + I) D^-1/2."""
    a = np.asarray(adjacency, dtype=np.float64)
    a_hat = a + np.eye(a.shape[0])
    d = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return a_hat * d[:, None] * d[None, :]


def graph_operator(graph) -> np.ndarray:
    """Cached normalized adjacency of a :class:`~m3dbfs.braindata.BrainGraph`."""
    op = graph.cache.get("norm_adj")
    if op is None:
        op = graph.cache["norm_adj"] = normalized_adjacency(graph.adjacency)
    return op


class GCNEncoder(Module):
    """Stack of graph convolutions ``H <- relu(Â H W)``; the last layer stays linear."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, n_layers: int,
                 rng: np.random.Generator):
        if n_layers < 1:
            raise ValueError("a GCN encoder needs at least one layer")
        dims = [in_dim] + [hidden_dim] * (n_layers - 1) + [out_dim]
        self.weights = [Parameter(glorot_uniform(rng, a, b)) for a, b in zip(dims, dims[1:])]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def __call__(self, operators: np.ndarray, features) -> Tensor:
        """Encode a batch of graphs.

        ``operators`` is a ``(B, N, N)`` stack of normalized adjacencies and
        ``features`` the ``(B*N, d)`` row-stacked node features.
        """
        h = features if isinstance(features, Tensor) else Tensor(features)
        if h.shape[1] != self.in_dim:
            raise ShapeError(f"node features have width {h.shape[1]}, encoder expects {self.in_dim}")
        last = len(self.weights) - 1
        for i, w in enumerate(self.weights):
            h = blockdiag_matmul(operators, matmul(h, w))
            if i < last:
                h = relu(h)
        return h


def gcn_forward(enc: GCNEncoder, graph) -> Tensor:
    """Per-region embeddings of a single graph, shape ``(N, out_dim)``."""
    return enc(graph_operator(graph)[None], graph.features)


def readout(h) -> Tensor:
    """Mean pooling over regions."""
    return mean_rows(h)


def pooling_matrix(n_graphs: int, rows_per_graph: int) -> np.ndarray:
    """Constant ``(B, B*n)`` matrix whose product with stacked rows is the per-graph mean."""
    return np.kron(np.eye(n_graphs), np.full((1, rows_per_graph), 1.0 / rows_per_graph))


def batched_readout(h, n_graphs: int) -> Tensor:
    rows = h.shape[0]
    if rows % n_graphs:
        raise ShapeError(f"{rows} rows cannot be split evenly over {n_graphs} graphs")
    return matmul(Tensor(pooling_matrix(n_graphs, rows // n_graphs)), h)


class ClassifierHead(Linear):
    """Single affine layer from a pooled embedding to two logits."""

    def __init__(self, in_dim: int, rng: np.random.Generator):
        super().__init__(in_dim, 2, rng)


def classify(head: ClassifierHead, z) -> Tensor:
    return head(z)


class Projection(Linear):
    """Row-wise linear map from encoder width to MoE token width."""
