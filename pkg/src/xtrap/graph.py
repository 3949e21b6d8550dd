"""Immutable undirected graphs and the structural algebra built on them.

A Graph stores each undirected edge once as (u, v) with u < v. Node and
edge features are float64 numpy arrays frozen after construction, so
graphs are safe to share across workers.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptySubgraph,
    GraphInvariantError,
    IndexOutOfRange,
    IntraComponentBridge,
)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph with node features and optional edge features."""

    num_nodes: int
    edges: tuple  # tuple of (u, v) with u < v
    node_features: np.ndarray  # [num_nodes, p]
    edge_features: Optional[np.ndarray] = None  # [num_edges, q]

    def __post_init__(self):
        n = self.num_nodes
        if n <= 0:
            raise GraphInvariantError("graph must have at least one node")
        canon = []
        seen = set()
        for e in self.edges:
            u, v = int(e[0]), int(e[1])
            if not (0 <= u < n and 0 <= v < n):
                raise IndexOutOfRange(f"edge ({u},{v}) out of range for {n} nodes")
            if u == v:
                raise GraphInvariantError(f"self-loop at node {u}")
            if u > v:
                u, v = v, u
            if (u, v) in seen:
                raise GraphInvariantError(f"duplicate edge ({u},{v})")
            seen.add((u, v))
            canon.append((u, v))
        object.__setattr__(self, "edges", tuple(canon))

        x = np.asarray(self.node_features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != n:
            raise GraphInvariantError(
                f"node_features shape {x.shape} does not match {n} nodes"
            )
        object.__setattr__(self, "node_features", _frozen(x))

        if self.edge_features is not None:
            ef = np.asarray(self.edge_features, dtype=np.float64)
            if ef.ndim != 2 or ef.shape[0] != len(canon):
                raise GraphInvariantError(
                    f"edge_features shape {ef.shape} does not match {len(canon)} edges"
                )
            object.__setattr__(self, "edge_features", _frozen(ef))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_node_features(self) -> int:
        return self.node_features.shape[1]

    @property
    def num_edge_features(self) -> int:
        return 0 if self.edge_features is None else self.edge_features.shape[1]

    def edge_array(self) -> np.ndarray:
        """Edges as an int array of shape [m, 2] (empty -> [0, 2])."""
        if not self.edges:
            return np.zeros((0, 2), dtype=np.int64)
        return np.asarray(self.edges, dtype=np.int64)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    def neighbors(self, u: int) -> list:
        out = []
        for a, b in self.edges:
            if a == u:
                out.append(b)
            elif b == u:
                out.append(a)
        return sorted(out)

    def has_edge(self, u: int, v: int) -> bool:
        if u > v:
            u, v = v, u
        return (u, v) in set(self.edges)


@dataclass(frozen=True)
class LabeledSample:
    """A graph (or node of a shared graph) with a soft label and environment id.

    Exactly one of `graph` / `node_id` is set, depending on the task level.
    `meta` holds provenance: ground-truth motif node ids, recorded bridge
    edges, augmentation option and source lineage.
    """

    label: np.ndarray  # probability vector over classes
    env: int
    graph: Optional[Graph] = None
    node_id: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        y = np.asarray(self.label, dtype=np.float64)
        if y.ndim != 1 or np.any(y < 0) or abs(float(y.sum()) - 1.0) > 1e-9:
            raise GraphInvariantError(
                f"label must be a probability vector, got {y} (sum={y.sum()})"
            )
        object.__setattr__(self, "label", _frozen(y))
        if (self.graph is None) == (self.node_id is None):
            raise GraphInvariantError("exactly one of graph/node_id must be set")

    @property
    def hard_label(self) -> int:
        return int(np.argmax(self.label))


@dataclass(frozen=True)
class Bridge:
    u: int  # global node index under the concatenated component indexing
    v: int
    comp_u: int
    comp_v: int
    attr: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.comp_u == self.comp_v:
            raise IntraComponentBridge(
                f"bridge ({self.u},{self.v}) stays inside component {self.comp_u}"
            )
        if self.attr is not None:
            object.__setattr__(
                self, "attr", _frozen(np.atleast_1d(np.asarray(self.attr)))
            )


@dataclass(frozen=True)
class BridgeSet:
    bridges: tuple  # tuple of Bridge

    def __post_init__(self):
        object.__setattr__(self, "bridges", tuple(self.bridges))

    def __len__(self):
        return len(self.bridges)

    def __iter__(self):
        return iter(self.bridges)


def component_offsets(components: Sequence[Graph]) -> np.ndarray:
    """Start index of each component under concatenated node indexing."""
    sizes = [g.num_nodes for g in components]
    return np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)


def component_of_nodes(components: Sequence[Graph]) -> np.ndarray:
    """Component index for every node of the concatenation."""
    return np.concatenate(
        [np.full(g.num_nodes, k, dtype=np.int64) for k, g in enumerate(components)]
    )


def splice(components: Sequence[Graph], bridges: BridgeSet) -> Graph:
    """Join component graphs into one by their union plus the bridge edges.

    Node indexing is concatenation order: component k's nodes live at
    offset sum(|V(c_i)| for i < k). No nodes are added; the result has
    exactly the union of the reindexed component edges and the bridges.
    """
    if not components:
        raise GraphInvariantError("splice needs at least one component")
    widths = {g.num_node_features for g in components}
    if len(widths) > 1:
        raise GraphInvariantError(f"components disagree on feature width: {widths}")
    offsets = component_offsets(components)
    total = int(offsets[-1] + components[-1].num_nodes)
    comp_of = component_of_nodes(components)

    edges = []
    for off, g in zip(offsets, components):
        edges.extend((int(off) + u, int(off) + v) for u, v in g.edges)

    qs = {g.num_edge_features for g in components}
    if len(qs) > 1:
        raise GraphInvariantError(f"components disagree on edge-feature width: {qs}")
    q = qs.pop()
    bridge_attr_widths = {
        b.attr.shape[0] for b in bridges if b.attr is not None
    }
    if len(bridge_attr_widths) > 1:
        raise GraphInvariantError("bridges disagree on attribute width")
    if bridge_attr_widths:
        bq = bridge_attr_widths.pop()
        if q and bq != q:
            raise GraphInvariantError(
                f"bridge attribute width {bq} != component edge-feature width {q}"
            )
        q = q or bq

    for b in bridges:
        for node, comp in ((b.u, b.comp_u), (b.v, b.comp_v)):
            if not (0 <= node < total):
                raise IndexOutOfRange(f"bridge endpoint {node} out of range")
            if comp_of[node] != comp:
                raise IntraComponentBridge(
                    f"bridge endpoint {node} is in component {comp_of[node]}, "
                    f"not the declared component {comp}"
                )
        if comp_of[b.u] == comp_of[b.v]:
            raise IntraComponentBridge(
                f"bridge ({b.u},{b.v}) joins nodes of the same component"
            )
        edges.append((b.u, b.v))

    x = np.concatenate([g.node_features for g in components], axis=0)

    ef = None
    if q:
        rows = []
        for g in components:
            if g.num_edges:
                rows.append(
                    g.edge_features
                    if g.edge_features is not None
                    else np.zeros((g.num_edges, q))
                )
        for b in bridges:
            rows.append(
                (b.attr if b.attr is not None else np.zeros(q)).reshape(1, q)
            )
        ef = np.concatenate(rows, axis=0) if rows else np.zeros((0, q))

    return Graph(num_nodes=total, edges=tuple(edges), node_features=x, edge_features=ef)


def induced_subgraph(g: Graph, keep: np.ndarray) -> Graph:
    """Subgraph induced by the boolean node mask, nodes reindexed densely."""
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (g.num_nodes,):
        raise GraphInvariantError(
            f"mask length {keep.shape} does not match {g.num_nodes} nodes"
        )
    if not keep.any():
        raise EmptySubgraph("all-false node mask")
    new_index = np.cumsum(keep) - 1  # old -> new for kept nodes
    kept_edges = []
    kept_rows = []
    for i, (u, v) in enumerate(g.edges):
        if keep[u] and keep[v]:
            kept_edges.append((int(new_index[u]), int(new_index[v])))
            kept_rows.append(i)
    ef = None
    if g.edge_features is not None:
        ef = g.edge_features[kept_rows] if kept_rows else np.zeros(
            (0, g.num_edge_features)
        )
    return Graph(
        num_nodes=int(keep.sum()),
        edges=tuple(kept_edges),
        node_features=g.node_features[keep],
        edge_features=ef,
    )


def connected_components(g: Graph) -> list:
    """List of node-index sets, one per connected component."""
    parent = list(range(g.num_nodes))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for u, v in g.edges:
        ra, rb = find(u), find(v)
        if ra != rb:
            parent[ra] = rb
    groups = {}
    for i in range(g.num_nodes):
        groups.setdefault(find(i), set()).add(i)
    return sorted(groups.values(), key=min)


def is_connected(g: Graph) -> bool:
    return len(connected_components(g)) == 1
