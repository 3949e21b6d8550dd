"""GIN / GCN message passing, graph batching, and classifier forward.

Graphs in a batch are concatenated block-diagonally: node features are
stacked, edges offset, and a segment-id vector maps nodes back to their
graph for mean pooling.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..errors import ShapeMismatch
from ..graph import Graph
from .params import ParamStore
from .tensor import Tensor, concat, gather, index_sum, relu, segment_mean

DEG_MAX = 10  # degree one-hot cap


@dataclass
class GNNConfig:
    kind: str = "GIN"  # GIN | GCN
    num_layers: int = 3
    hidden_dim: int = 64
    num_classes: int = 0  # 0 = encoder only, no head
    pooling: str = "mean"  # mean | none
    dropout: float = 0.5  # classifier head only
    # append a capped degree one-hot to the input features; near-constant
    # data features alone are too weak a signal for structure tasks
    degree_onehot: bool = False

    def __post_init__(self):
        if self.kind not in ("GIN", "GCN"):
            raise ShapeMismatch(f"unknown GNN kind {self.kind!r}")
        if self.num_layers < 1 or self.hidden_dim < 1:
            raise ShapeMismatch("num_layers and hidden_dim must be >= 1")

    def in_dim(self, p: int) -> int:
        return p + (DEG_MAX + 1 if self.degree_onehot else 0)


class GraphBatch:
    """Block-diagonal concatenation of graphs for one forward pass."""

    def __init__(self, graphs: Sequence[Graph]):
        sizes = [g.num_nodes for g in graphs]
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.num_graphs = len(graphs)
        self.num_nodes = int(sum(sizes))
        self.x = np.concatenate([g.node_features for g in graphs], axis=0)
        self.seg = np.concatenate(
            [np.full(n, i, dtype=np.int64) for i, n in enumerate(sizes)]
        )
        src, dst = [], []
        for off, g in zip(offsets, graphs):
            for u, v in g.edges:
                src += [off + u, off + v]
                dst += [off + v, off + u]
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)

        deg = np.bincount(self.dst, minlength=self.num_nodes)
        capped = np.minimum(deg, DEG_MAX)
        self.deg_onehot = np.zeros((self.num_nodes, DEG_MAX + 1))
        self.deg_onehot[np.arange(self.num_nodes), capped] = 1.0

        # symmetric-normalized edges with self-loops, for GCN
        d_hat = deg.astype(np.float64) + 1.0
        loops = np.arange(self.num_nodes, dtype=np.int64)
        self.gcn_src = np.concatenate([self.src, loops])
        self.gcn_dst = np.concatenate([self.dst, loops])
        self.gcn_coeff = 1.0 / np.sqrt(d_hat[self.gcn_src] * d_hat[self.gcn_dst])


def init_gnn_params(
    params: ParamStore,
    cfg: GNNConfig,
    in_dim: int,
    rng: np.random.Generator,
    prefix: str = "",
) -> None:
    """Register layer (and optional head) parameters under `prefix`.

    `in_dim` is the data feature width; the degree one-hot, if enabled,
    is accounted for here."""
    d = cfg.hidden_dim
    for layer in range(cfg.num_layers):
        fan_in = cfg.in_dim(in_dim) if layer == 0 else d
        if cfg.kind == "GIN":
            params.add(f"{prefix}layer{layer}.eps", np.zeros(()))
            params.add_linear(f"{prefix}layer{layer}.lin1", fan_in, d, rng)
            params.add_linear(f"{prefix}layer{layer}.lin2", d, d, rng)
        else:
            params.add_linear(f"{prefix}layer{layer}.lin", fan_in, d, rng)
    if cfg.num_classes > 0:
        params.add_linear(f"{prefix}head", d, cfg.num_classes, rng)


def _linear(params: ParamStore, name: str, h: Tensor) -> Tensor:
    return h @ params.tensor(f"{name}.w") + params.tensor(f"{name}.b")


def encode_nodes(
    params: ParamStore,
    cfg: GNNConfig,
    batch: GraphBatch,
    prefix: str = "",
    x: Optional[Tensor] = None,
) -> Tensor:
    """Node embeddings [num_nodes, hidden] after all message-passing layers.

    `x` optionally replaces batch.x as a differentiable feature matrix
    (augmented features carrying gradients into mask parameters).
    """
    h = x if x is not None else Tensor(batch.x)
    if cfg.degree_onehot:
        h = concat([h, Tensor(batch.deg_onehot)], axis=1)
    w0 = params[f"{prefix}layer0.lin1.w" if cfg.kind == "GIN" else f"{prefix}layer0.lin.w"]
    if h.shape[1] != w0.shape[0]:
        raise ShapeMismatch(
            f"feature width {h.shape[1]} does not match parameters "
            f"({w0.shape[0]})"
        )
    for layer in range(cfg.num_layers):
        name = f"{prefix}layer{layer}"
        if cfg.kind == "GIN":
            agg = index_sum(gather(h, batch.src), batch.dst, batch.num_nodes)
            eps = params.tensor(f"{name}.eps")
            h = h * (eps + 1.0) + agg
            h = relu(_linear(params, f"{name}.lin1", h))
            h = _linear(params, f"{name}.lin2", h)
        else:
            msgs = gather(h, batch.gcn_src) * batch.gcn_coeff[:, None]
            h = index_sum(msgs, batch.gcn_dst, batch.num_nodes)
            h = _linear(params, f"{name}.lin", h)
        if layer < cfg.num_layers - 1:  # last layer stays linear
            h = relu(h)
    return h


def classify(
    params: ParamStore,
    cfg: GNNConfig,
    batch: GraphBatch,
    rng: Optional[np.random.Generator] = None,
    train: bool = False,
    prefix: str = "",
    node_features: Optional[Tensor] = None,
) -> Tensor:
    """Logits per graph (mean pooling) or per node (pooling 'none')."""
    h = encode_nodes(params, cfg, batch, prefix, x=node_features)
    if cfg.pooling == "mean":
        h = segment_mean(h, batch.seg, batch.num_graphs)
    if train and cfg.dropout > 0:
        if rng is None:
            raise ShapeMismatch("training-mode dropout needs an rng")
        keep = (rng.random(h.shape) >= cfg.dropout) / (1.0 - cfg.dropout)
        h = h * keep
    return _linear(params, f"{prefix}head", h)


def gnn_forward(params: ParamStore, cfg: GNNConfig, g: Graph, prefix: str = ""):
    """Evaluate one graph: (node_embeddings, pooled graph embedding or None)."""
    batch = GraphBatch([g])
    h = encode_nodes(params, cfg, batch, prefix)
    pooled = None
    if cfg.pooling == "mean":
        pooled = segment_mean(h, batch.seg, 1).data[0].copy()
    return h.data.copy(), pooled
