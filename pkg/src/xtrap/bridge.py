"""Conditional-VAE bridge generator for splicing component graphs.

Each component is encoded independently by a GIN into per-node Gaussian
latents; a symmetric MLP decoder scores every cross-component node pair
as a bridge probability (plus a categorical over edge-attribute classes
when edge features exist). A separate pooled GNN predicts how many
bridges a component group needs. The random-bridge baseline lives here
too.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dataset import DatasetBundle
from .errors import (
    InfeasibleBridgeCount,
    NoPartitionAvailable,
    SameComponentPair,
    ShapeMismatch,
)
from .graph import (
    Bridge,
    BridgeSet,
    Graph,
    component_of_nodes,
    component_offsets,
    connected_components,
    induced_subgraph,
    splice,
)
from .nn.gnn import GNNConfig, GraphBatch, encode_nodes, init_gnn_params, segment_mean
from .nn.params import ParamStore, adam_step
from .nn.tensor import (
    Tensor,
    bce_with_logits,
    exp,
    gather,
    relu,
    softmax,
    softmax_cross_entropy,
)

F_LAT = 16
B_MAX = 4
HIDDEN = 64
ENC_LAYERS = 3  # three-layer GIN encoder


@dataclass
class LatentDist:
    """Factorized per-node Gaussian over latents, tagged by component."""

    mu: np.ndarray  # [n, f_lat]
    sigma: np.ndarray  # [n, f_lat], > 0
    component_of: np.ndarray  # [n]

    def __post_init__(self):
        if np.any(self.sigma <= 0):
            raise ShapeMismatch("sigma must be strictly positive")

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mu + self.sigma * rng.standard_normal(self.mu.shape)


def new_bridge_generator(p: int, q: int, rng: np.random.Generator,
                         hidden: int = HIDDEN, f_lat: int = F_LAT,
                         b_max: int = B_MAX) -> ParamStore:
    """Fresh encoder/decoder/count parameters for feature widths (p, q)."""
    params = ParamStore()
    enc_cfg = GNNConfig(kind="GIN", num_layers=ENC_LAYERS, hidden_dim=hidden,
                        num_classes=0, pooling="none", degree_onehot=True)
    init_gnn_params(params, enc_cfg, p, rng, prefix="enc.")
    params.add_linear("mu", hidden, f_lat, rng)
    params.add_linear("logvar", hidden, f_lat, rng, zero_init=True)  # KL starts at 0
    params.add_linear("dec.lin1", f_lat, hidden, rng)
    params.add_linear("dec.lin2", hidden, 1 + q, rng)
    init_gnn_params(params, enc_cfg, p, rng, prefix="cnt.")
    params.add_linear("cnt.head", hidden, b_max, rng)
    for name, value in (("p", p), ("q", q), ("f_lat", f_lat),
                        ("b_max", b_max), ("hidden", hidden)):
        params.add(f"cfg.{name}", np.asarray(float(value)))
    return params


def _cfg(params: ParamStore, name: str) -> int:
    return int(params[f"cfg.{name}"])


def _enc_cfg(params: ParamStore) -> GNNConfig:
    return GNNConfig(kind="GIN", num_layers=ENC_LAYERS,
                     hidden_dim=_cfg(params, "hidden"), num_classes=0,
                     pooling="none", degree_onehot=True)


def _encode_tensors(components: Sequence[Graph], params: ParamStore):
    """(mu, logvar) tensors plus the batch; components stay independent."""
    batch = GraphBatch(components)
    h = encode_nodes(params, _enc_cfg(params), batch, prefix="enc.")
    mu = h @ params.tensor("mu.w") + params.tensor("mu.b")
    logvar = h @ params.tensor("logvar.w") + params.tensor("logvar.b")
    return mu, logvar, batch


def encode(components: Sequence[Graph], params: ParamStore) -> LatentDist:
    """Per-node latent distribution for a group of component graphs."""
    if not components:
        raise ShapeMismatch("encode needs at least one component")
    mu, logvar, _ = _encode_tensors(components, params)
    return LatentDist(
        mu=mu.data.copy(),
        sigma=np.exp(0.5 * logvar.data),
        component_of=component_of_nodes(components),
    )


def cross_pairs(component_of: np.ndarray) -> np.ndarray:
    """All (i, j) with i < j from different components, shape [K, 2]."""
    comp = np.asarray(component_of)
    n = len(comp)
    ii, jj = np.triu_indices(n, k=1)
    keep = comp[ii] != comp[jj]
    return np.stack([ii[keep], jj[keep]], axis=1)


def _decode_tensor(z: Tensor, pairs: np.ndarray, params: ParamStore):
    """(bridge logits [K], attr logits [K, q] or None) for the given pairs."""
    s = gather(z, pairs[:, 0]) + gather(z, pairs[:, 1])  # symmetric in (i, j)
    h = relu(s @ params.tensor("dec.lin1.w") + params.tensor("dec.lin1.b"))
    out = h @ params.tensor("dec.lin2.w") + params.tensor("dec.lin2.b")
    q = _cfg(params, "q")
    logits = out.sum(axis=1) if q == 0 else gather(out.T, [0]).reshape(-1)
    attr = None
    if q > 0:
        attr = gather(out.T, np.arange(1, 1 + q)).T
    return logits, attr


def decode_pair(z_i: np.ndarray, z_j: np.ndarray, params: ParamStore,
                comp: Optional[tuple] = None):
    """Bridge logit and attribute logits for one latent pair.

    `comp`, when given, is the (comp_i, comp_j) pair; equal components
    are rejected (bridges are cross-component by definition).
    """
    if comp is not None and comp[0] == comp[1]:
        raise SameComponentPair(f"nodes share component {comp[0]}")
    z = Tensor(np.stack([np.asarray(z_i, dtype=np.float64),
                         np.asarray(z_j, dtype=np.float64)]))
    logits, attr = _decode_tensor(z, np.array([[0, 1]]), params)
    attr_out = None if attr is None else attr.data[0].copy()
    return float(logits.data[0]), attr_out


def decode_probabilities(latent: LatentDist, z: np.ndarray, params: ParamStore):
    """(pairs, bridge probabilities, attr logits) over all cross pairs."""
    pairs = cross_pairs(latent.component_of)
    if len(pairs) == 0:
        return pairs, np.zeros(0), None
    logits, attr = _decode_tensor(Tensor(z), pairs, params)
    probs = 1.0 / (1.0 + np.exp(-np.clip(logits.data, -500, 500)))
    return pairs, probs, (None if attr is None else attr.data)


def predict_bridge_count(components: Sequence[Graph], params: ParamStore) -> np.ndarray:
    """Categorical probabilities over bridge counts {1..b_max}."""
    if not components:
        raise ShapeMismatch("predict_bridge_count needs components")
    batch = GraphBatch(components)
    h = encode_nodes(params, _enc_cfg(params), batch, prefix="cnt.")
    pooled = segment_mean(h, batch.seg, batch.num_graphs)
    group = pooled.mean(axis=0).reshape(1, -1)
    logits = group @ params.tensor("cnt.head.w") + params.tensor("cnt.head.b")
    return softmax(logits.data[0])


def sample_bridge_count(components, params, rng: np.random.Generator) -> int:
    probs = predict_bridge_count(components, params)
    return int(rng.choice(len(probs), p=probs)) + 1


def _sample_attr(attr_logits: Optional[np.ndarray], k: int, q: int,
                 rng: np.random.Generator) -> Optional[np.ndarray]:
    if q == 0:
        return None
    probs = softmax(attr_logits[k])
    cls = int(rng.choice(q, p=probs))
    attr = np.zeros(q)
    attr[cls] = 1.0
    return attr


def sample_bridges(latent: LatentDist, B: int, params: ParamStore,
                   rng: np.random.Generator) -> BridgeSet:
    """Exactly B cross-component bridges, drawn without replacement with
    probability proportional to the decoded bridge scores."""
    pairs = cross_pairs(latent.component_of)
    if B < 1 or B > len(pairs):
        raise InfeasibleBridgeCount(
            f"requested {B} bridges from {len(pairs)} cross-component pairs"
        )
    z = latent.sample(rng)
    pairs, probs, attr_logits = decode_probabilities(latent, z, params)
    weights = np.clip(probs, 1e-12, None)
    q = _cfg(params, "q")
    chosen = []
    available = np.arange(len(pairs))
    for _ in range(B):
        w = weights[available]
        k = int(rng.choice(len(available), p=w / w.sum()))
        chosen.append(int(available[k]))
        available = np.delete(available, k)
    comp = latent.component_of
    bridges = [
        Bridge(
            u=int(pairs[k, 0]), v=int(pairs[k, 1]),
            comp_u=int(comp[pairs[k, 0]]), comp_v=int(comp[pairs[k, 1]]),
            attr=_sample_attr(attr_logits, k, q, rng),
        )
        for k in chosen
    ]
    return BridgeSet(tuple(bridges))


def _repair(components, bridges, pairs, weights, comp, attr_logits, q, rng):
    """Greedily add highest-weight bridges until the splice is connected."""
    bridges = list(bridges)
    while True:
        spliced = splice(components, BridgeSet(tuple(bridges)))
        groups = connected_components(spliced)
        if len(groups) == 1:
            return BridgeSet(tuple(bridges))
        group_of = np.empty(spliced.num_nodes, dtype=np.int64)
        for gi, nodes in enumerate(groups):
            for node in nodes:
                group_of[node] = gi
        joins = group_of[pairs[:, 0]] != group_of[pairs[:, 1]]
        if not joins.any():
            raise InfeasibleBridgeCount("no cross-component pair can reconnect")
        candidates = np.flatnonzero(joins)
        k = int(candidates[np.argmax(weights[candidates])])
        bridges.append(
            Bridge(u=int(pairs[k, 0]), v=int(pairs[k, 1]),
                   comp_u=int(comp[pairs[k, 0]]), comp_v=int(comp[pairs[k, 1]]),
                   attr=_sample_attr(attr_logits, k, q, rng))
        )


def sample_bridges_connected(components: Sequence[Graph], latent: LatentDist,
                             B: int, params: ParamStore,
                             rng: np.random.Generator) -> BridgeSet:
    """sample_bridges plus connectivity repair on the spliced result."""
    base = sample_bridges(latent, B, params, rng)
    z = latent.sample(rng)
    pairs, probs, attr_logits = decode_probabilities(latent, z, params)
    taken = {(b.u, b.v) for b in base}
    weights = np.clip(probs, 1e-12, None)
    for k, (i, j) in enumerate(pairs):
        if (int(i), int(j)) in taken:
            weights[k] = 0.0  # already placed
    return _repair(components, base, pairs, weights, latent.component_of,
                   attr_logits, _cfg(params, "q"), rng)


def random_bridges(components: Sequence[Graph], B: int,
                   rng: np.random.Generator, q: int = 0) -> BridgeSet:
    """Uniform cross-component bridges without replacement (baseline)."""
    comp = component_of_nodes(components)
    pairs = cross_pairs(comp)
    if B < 1 or B > len(pairs):
        raise InfeasibleBridgeCount(
            f"requested {B} bridges from {len(pairs)} cross-component pairs"
        )
    picks = rng.choice(len(pairs), size=B, replace=False)
    bridges = []
    for k in picks:
        attr = None
        if q > 0:
            attr = np.zeros(q)
            attr[int(rng.integers(0, q))] = 1.0
        bridges.append(Bridge(u=int(pairs[k, 0]), v=int(pairs[k, 1]),
                              comp_u=int(comp[pairs[k, 0]]),
                              comp_v=int(comp[pairs[k, 1]]), attr=attr))
    return BridgeSet(tuple(bridges))


def random_bridges_connected(components, B, rng, q: int = 0) -> BridgeSet:
    base = random_bridges(components, B, rng, q=q)
    comp = component_of_nodes(components)
    pairs = cross_pairs(comp)
    taken = {(b.u, b.v) for b in base}
    weights = rng.random(len(pairs))  # random greedy order
    for k, (i, j) in enumerate(pairs):
        if (int(i), int(j)) in taken:
            weights[k] = 0.0
    return _repair(components, base, pairs, weights, comp, None, q, rng)


def kl_term(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL[N(mu, sigma) || N(0, I)] summed over nodes and dims; >= 0."""
    return ((mu * mu + exp(logvar) - logvar - 1.0) * 0.5).sum()


def vae_loss(latent, true_bridges: BridgeSet, decoded, alpha: float, beta: float):
    """Minimization objective: BCE(bridges) + alpha*CE(attrs) + beta*KL.

    `latent` is a LatentDist (or (mu, logvar) tensors); `decoded` is the
    (pairs, bridge logits, attr logits) triple over all cross pairs.
    Returns a Tensor when any input carries gradients, else a float.
    """
    if isinstance(latent, LatentDist):
        mu = Tensor(latent.mu)
        logvar = Tensor(2.0 * np.log(latent.sigma))
    else:
        mu, logvar = latent
    pairs, logits, attr_logits = decoded
    if not isinstance(logits, Tensor):
        logits = Tensor(logits)
    pair_index = {(int(i), int(j)): k for k, (i, j) in enumerate(pairs)}
    targets = np.zeros(len(pairs))
    attr_rows, attr_targets = [], []
    for b in true_bridges:
        u, v = min(b.u, b.v), max(b.u, b.v)
        k = pair_index.get((u, v))
        if k is None:
            raise ShapeMismatch(f"true bridge ({u},{v}) is not a cross pair")
        targets[k] = 1.0
        if b.attr is not None and attr_logits is not None:
            attr_rows.append(k)
            attr_targets.append(np.asarray(b.attr, dtype=np.float64))
    loss = bce_with_logits(logits, targets).sum() + beta * kl_term(mu, logvar)
    if attr_rows and alpha != 0.0:
        if not isinstance(attr_logits, Tensor):
            attr_logits = Tensor(attr_logits)
        rows = gather(attr_logits, np.asarray(attr_rows))
        loss = loss + alpha * softmax_cross_entropy(rows, np.stack(attr_targets)).sum()
    if isinstance(loss, Tensor) and not loss.requires_grad:
        return loss.item()
    return loss


def partition_instances(bundle: DatasetBundle, extractor_params=None):
    """(components, true bridges) training pairs for the generator.

    Prefers generator meta (motif nodes + recorded attachment edges);
    falls back to causal-extractor cuts. The true bridge endpoints are
    re-indexed to the spliced (component-concatenated) node order.
    """
    from .extract import extract_mask

    instances = []
    for idx, s in enumerate(bundle.train):
        g = bundle.sample_graph(s)
        motif_nodes = s.meta.get("motif_nodes")
        if motif_nodes is not None:
            keep = np.zeros(g.num_nodes, dtype=bool)
            keep[np.asarray(motif_nodes, dtype=np.int64)] = True
        elif extractor_params is not None:
            keep = extract_mask(g, extractor_params)
        else:
            raise NoPartitionAvailable(
                "training graphs carry no partition meta and no extractor was given"
            )
        if keep.all() or not keep.any():
            continue
        rest = induced_subgraph(g, ~keep)
        part = induced_subgraph(g, keep)
        new_index = np.empty(g.num_nodes, dtype=np.int64)
        new_index[~keep] = np.arange(rest.num_nodes)
        new_index[keep] = rest.num_nodes + np.arange(part.num_nodes)
        cut = []
        for ei, (u, v) in enumerate(g.edges):
            if keep[u] != keep[v]:
                attr = g.edge_features[ei] if g.edge_features is not None else None
                a, b = int(new_index[u]), int(new_index[v])
                if a > b:
                    a, b = b, a
                cut.append(Bridge(u=a, v=b, comp_u=int(a >= rest.num_nodes),
                                  comp_v=int(b >= rest.num_nodes), attr=attr))
        if not cut:
            continue
        instances.append(((rest, part), BridgeSet(tuple(cut)), idx))
    if not instances:
        raise NoPartitionAvailable("no usable training instance")
    return instances


def pretrain_bridge_generator(bundle: DatasetBundle, extractor_params=None,
                              alpha: float = 1.0, beta: float = 0.5,
                              epochs: int = 30, rng=None,
                              lr: float = 1e-3, batch_size: int = 16,
                              hidden: int = HIDDEN) -> tuple[ParamStore, list]:
    """Train encoder/decoder and the bridge-count head. Returns (params,
    per-epoch mean losses)."""
    rng = rng if rng is not None else np.random.default_rng(0)
    params = new_bridge_generator(bundle.p, bundle.q, rng, hidden=hidden)
    instances = partition_instances(bundle, extractor_params)
    b_max = _cfg(params, "b_max")
    curve = []
    for _ in range(epochs):
        order = rng.permutation(len(instances))
        epoch_losses = []
        for start in range(0, len(order), batch_size):
            chunk = order[start : start + batch_size]
            total = None
            for k in chunk:
                components, true_bridges, _ = instances[k]
                mu, logvar, batch = _encode_tensors(components, params)
                eps_noise = rng.standard_normal(mu.shape)
                z = mu + exp(logvar * 0.5) * eps_noise
                comp_of = component_of_nodes(components)
                pairs = cross_pairs(comp_of)
                logits, attr_logits = _decode_tensor(z, pairs, params)
                loss = vae_loss((mu, logvar), true_bridges,
                                (pairs, logits, attr_logits), alpha, beta)
                # bridge-count head, trained jointly
                h = encode_nodes(params, _enc_cfg(params), batch, prefix="cnt.")
                pooled = segment_mean(h, batch.seg, batch.num_graphs)
                cnt_logits = pooled.mean(axis=0).reshape(1, -1) @ params.tensor(
                    "cnt.head.w") + params.tensor("cnt.head.b")
                target = np.zeros((1, b_max))
                target[0, min(len(true_bridges), b_max) - 1] = 1.0
                loss = loss + softmax_cross_entropy(cnt_logits, target).sum()
                total = loss if total is None else total + loss
                epoch_losses.append(loss.item())
            (total * (1.0 / len(chunk))).backward()
            adam_step(params, lr)
        curve.append(float(np.mean(epoch_losses)))
    return params, curve
