"""Pair-learning extraction of causal and environmental subgraphs.

A shared GIN encoder embeds nodes; weighted cosine similarity between a
pair of graphs scores each node, and a sigmoid turns row/column maxima
into keep probabilities. Training draws label-invariant (causal) or
environment-invariant (environmental) pairs and optimizes classification
of the masked graph plus a keep-ratio penalty, with gradients flowing
through the soft node mask. At inference a stored bank of reference
embeddings (the extractor's own best extractions, frozen at the end of
pretraining) stands in for the pair partner, so extraction of a single
graph is deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset import DatasetBundle
from .errors import NoValidPairs, ShapeMismatch
from .graph import Graph, induced_subgraph
from .nn.gnn import DEG_MAX, GNNConfig, GraphBatch, classify, encode_nodes, init_gnn_params
from .nn.losses import batch_cross_entropy
from .nn.params import ParamStore, adam_step
from .nn.tensor import Tensor, amax, exp, gather, relu, sigmoid, sqrt

COS_EPS = 1e-8
ENC_LAYERS = 3
DEFAULT_RHO = {"causal": 0.35, "environmental": 0.65}
RATIO_WEIGHT = 2.0


def new_extractor(p: int, num_out: int, rho: float, rng: np.random.Generator,
                  hidden: int = 64) -> ParamStore:
    params = ParamStore()
    enc_cfg = GNNConfig(kind="GIN", num_layers=ENC_LAYERS, hidden_dim=hidden,
                        num_classes=0, pooling="none", degree_onehot=True)
    init_gnn_params(params, enc_cfg, p, rng, prefix="enc.")
    # the mask must gate the degree encoding too, so the classifier takes
    # the pre-concatenated input rather than appending one-hots itself
    clf_cfg = GNNConfig(kind="GIN", num_layers=ENC_LAYERS, hidden_dim=hidden,
                        num_classes=num_out, pooling="mean", dropout=0.0)
    init_gnn_params(params, clf_cfg, p + DEG_MAX + 1, rng, prefix="clf.")
    # similarity weight, kept positive via exp: a negative w inverts the
    # keep-probability ranking, a shortcut the ratio penalty loves
    params.add("w_log", np.asarray(0.0))
    for name, value in (("p", p), ("num_out", num_out), ("rho", rho),
                        ("hidden", hidden)):
        params.add(f"cfg.{name}", np.asarray(float(value)))
    return params


def _enc_cfg(params: ParamStore) -> GNNConfig:
    return GNNConfig(kind="GIN", num_layers=ENC_LAYERS,
                     hidden_dim=int(params["cfg.hidden"]), num_classes=0,
                     pooling="none", degree_onehot=True)


def _clf_cfg(params: ParamStore) -> GNNConfig:
    return GNNConfig(kind="GIN", num_layers=ENC_LAYERS,
                     hidden_dim=int(params["cfg.hidden"]),
                     num_classes=int(params["cfg.num_out"]), pooling="mean",
                     dropout=0.0)


def _normalize_rows(z: Tensor) -> Tensor:
    norms = sqrt((z * z).sum(axis=1) + COS_EPS).reshape(-1, 1)
    return z / norms


def node_embeddings(g: Graph, params: ParamStore) -> Tensor:
    return encode_nodes(params, _enc_cfg(params), GraphBatch([g]), prefix="enc.")


def weighted_similarity(g1: Graph, g2: Graph, params: ParamStore) -> np.ndarray:
    """S[i, j] = w * cos(z_i, z_j) between the two graphs' node embeddings."""
    return _similarity_tensor(
        node_embeddings(g1, params), node_embeddings(g2, params), params
    ).data.copy()


def similarity_weight(params: ParamStore) -> float:
    return float(np.exp(params["w_log"]))


def _similarity_tensor(z1: Tensor, z2: Tensor, params: ParamStore) -> Tensor:
    w = exp(params.tensor("w_log")).reshape(1, 1)
    return (_normalize_rows(z1) @ _normalize_rows(z2).T) * w


def node_keep_probs(sim: np.ndarray, side: int) -> np.ndarray:
    """Per-node keep probability: sigmoid of the row (side 1) or column
    (side 2) maximum of the similarity matrix."""
    sim = np.asarray(sim, dtype=np.float64)
    if side == 1:
        scores = sim.max(axis=1)
    elif side == 2:
        scores = sim.max(axis=0)
    else:
        raise ShapeMismatch(f"side must be 1 or 2, got {side}")
    return 1.0 / (1.0 + np.exp(-scores))


def topk_mask(probs: np.ndarray, rho: float) -> np.ndarray:
    """Boolean mask keeping the ceil(rho*n) highest-probability nodes.

    Ties break toward the lower node index, so extraction is
    deterministic."""
    n = len(probs)
    k = max(1, min(n, int(np.ceil(rho * n))))
    order = np.lexsort((np.arange(n), -probs))  # prob desc, index asc
    mask = np.zeros(n, dtype=bool)
    mask[order[:k]] = True
    return mask


def sample_subgraph(g: Graph, probs: np.ndarray, mode: str,
                    rng: Optional[np.random.Generator] = None,
                    rho: float = 0.5) -> Graph:
    """Node-sampled subgraph: deterministic topk or Bernoulli (training);
    an empty Bernoulli draw falls back to topk."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (g.num_nodes,):
        raise ShapeMismatch("probs length must equal num_nodes")
    if mode == "topk":
        mask = topk_mask(probs, rho)
    elif mode == "bernoulli":
        if rng is None:
            raise ShapeMismatch("bernoulli mode needs an rng")
        mask = rng.random(g.num_nodes) < probs
        if not mask.any():
            mask = topk_mask(probs, rho)
    else:
        raise ShapeMismatch(f"unknown mode {mode!r}")
    return induced_subgraph(g, mask)


def _valid_pairs(bundle: DatasetBundle, kind: str):
    """Group train indices so pairs can be drawn uniformly per epoch.

    causal: same hard label, different environment.
    environmental: same environment, different hard label.
    """
    train = bundle.train
    labels = np.array([s.hard_label for s in train])
    envs = np.array([s.env for s in train])
    pairs_of = []
    for i in range(len(train)):
        if kind == "causal":
            ok = (labels == labels[i]) & (envs != envs[i])
        else:
            ok = (envs == envs[i]) & (labels != labels[i])
        partners = np.flatnonzero(ok)
        if len(partners):
            pairs_of.append((i, partners))
    if not pairs_of:
        raise NoValidPairs(f"no valid {kind} pairs in the training split")
    return pairs_of


def _keep_prob_tensor(z1: Tensor, z2: Tensor, params: ParamStore) -> Tensor:
    sim = _similarity_tensor(z1, z2, params)
    return sigmoid(amax(sim, axis=1))


ALIGN_MARGIN = 0.2
ALIGN_WEIGHT = 2.0


def _alignment_loss(z1: Tensor, z2: Tensor, rho: float) -> Tensor:
    """Within-pair ranking loss on cosine match scores.

    In a valid pair only the shared substructure can match, and it makes
    up roughly a rho fraction of the nodes: the top-k match scores are
    pulled toward 1 and the remainder pushed below a small margin. This
    is what actually shapes the embedding geometry; the classification
    term alone is satisfiable by leaky soft masks.
    """
    scores = amax(_normalize_rows(z1) @ _normalize_rows(z2).T, axis=1)
    n = scores.shape[0]
    k = max(1, min(n, int(np.ceil(rho * n))))
    order = np.argsort(-scores.data, kind="stable")
    loss = (1.0 - gather(scores, order[:k])).mean()
    if k < n:
        loss = loss + relu(gather(scores, order[k:]) - ALIGN_MARGIN).mean()
    return loss


def pretrain_extractor(bundle: DatasetBundle, kind: str, epochs: int = 40,
                       rng=None, rho: Optional[float] = None,
                       hidden: int = 64, lr: float = 3e-3,
                       pairs_per_epoch: int = 128,
                       batch_size: int = 16) -> tuple[ParamStore, list]:
    """Train an extractor of the given kind; returns (params, loss curve).

    The loss combines soft-masked classification (label for causal,
    training-environment index for environmental), a one-sided keep-ratio
    penalty, and the within-pair alignment term that makes the match
    scores selective. After the last epoch a reference bank of
    extracted-node embeddings is frozen into the parameters for
    partner-free inference.
    """
    if kind not in ("causal", "environmental"):
        raise ShapeMismatch(f"kind must be causal|environmental, got {kind!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    train = bundle.train
    train_envs = bundle.train_environments()
    if kind == "causal":
        num_out = bundle.num_classes
        target_of = lambda s: s.label
    else:
        num_out = len(train_envs)
        env_index = {e: k for k, e in enumerate(train_envs)}

        def target_of(s):
            t = np.zeros(num_out)
            t[env_index[s.env]] = 1.0
            return t

    rho = DEFAULT_RHO[kind] if rho is None else rho
    params = new_extractor(bundle.p, num_out, rho, rng, hidden=hidden)
    pairs_of = _valid_pairs(bundle, kind)
    clf_cfg = _clf_cfg(params)
    graphs = [bundle.sample_graph(s) for s in train]

    curve = []
    for _ in range(epochs):
        losses = []
        order = rng.integers(0, len(pairs_of), size=pairs_per_epoch)
        for start in range(0, len(order), batch_size):
            total = None
            chunk = order[start : start + batch_size]
            for pick in chunk:
                i, partners = pairs_of[pick]
                j = int(partners[rng.integers(0, len(partners))])
                g1, g2 = graphs[i], graphs[j]
                z1 = node_embeddings(g1, params)
                z2 = node_embeddings(g2, params)
                m1 = _keep_prob_tensor(z1, z2, params)
                keep = m1.reshape(-1, 1)
                batch1 = GraphBatch([g1])
                x_full = np.concatenate([g1.node_features, batch1.deg_onehot], axis=1)
                logits = classify(params, clf_cfg, batch1, prefix="clf.",
                                  node_features=keep * x_full)
                ce = batch_cross_entropy(logits, target_of(train[i]).reshape(1, -1)).sum()
                over = relu((m1.mean() - rho).reshape(1))  # only over-keeping hurts
                loss = ce + RATIO_WEIGHT * (over * over).sum()
                loss = loss + ALIGN_WEIGHT * _alignment_loss(z1, z2, rho)
                total = loss if total is None else total + loss
                losses.append(loss.item())
            (total * (1.0 / len(chunk))).backward()
            adam_step(params, lr)
        curve.append(float(np.mean(losses)))

    _freeze_references(bundle, params, kind, rho, rng)
    return params, curve


def _freeze_references(bundle, params, kind, rho, rng, per_group: int = 6,
                       partners_per_graph: int = 3, keep_fraction: float = 0.6):
    """Store reference embedding rows for partner-free inference.

    Rows come from each group's own extractions (keep probabilities
    averaged over several partners), then are filtered to the mutually
    consistent core across source graphs; a contaminated row would hand
    high scores to every nuisance node at query time.
    """
    train = bundle.train
    pairs_of = dict()
    for i, partners in _valid_pairs(bundle, kind):
        pairs_of[i] = partners
    if kind == "causal":
        key_of = lambda s: s.hard_label
    else:
        key_of = lambda s: s.env
    groups = {}
    for idx, s in enumerate(train):
        if idx in pairs_of:
            groups.setdefault(key_of(s), []).append(idx)
    # a causal row must recur across environments (motifs do, bases do
    # not); an environmental row must recur across labels
    tag_of = (lambda s: s.env) if kind == "causal" else (lambda s: s.hard_label)
    rows, row_tag = [], []
    for key in sorted(groups):
        members = groups[key]
        picks = [members[int(k)] for k in rng.choice(
            len(members), size=min(per_group, len(members)), replace=False)]
        for i in picks:
            g = bundle.sample_graph(train[i])
            partners = pairs_of[i]
            chosen = rng.choice(len(partners),
                                size=min(partners_per_graph, len(partners)),
                                replace=False)
            probs = np.zeros(g.num_nodes)
            for c in chosen:
                sim = weighted_similarity(
                    g, bundle.sample_graph(train[int(partners[int(c)])]), params)
                probs += node_keep_probs(sim, side=1)
            mask = topk_mask(probs / len(chosen), rho)
            z = node_embeddings(g, params).data
            rows.append(z[mask])
            row_tag.extend([tag_of(train[i])] * int(mask.sum()))
    bank = np.concatenate(rows, axis=0)
    tags = np.asarray(row_tag)
    norm = bank / (np.linalg.norm(bank, axis=1, keepdims=True) + COS_EPS)
    cos = norm @ norm.T
    consensus = np.array([
        cos[r][tags != tags[r]].max() if (tags != tags[r]).any() else 1.0
        for r in range(len(bank))
    ])
    keep_n = max(1, int(np.ceil(keep_fraction * len(bank))))
    order = np.lexsort((np.arange(len(bank)), -consensus))
    params.add("refs", bank[np.sort(order[:keep_n])])


def extract_probs(g: Graph, params: ParamStore) -> np.ndarray:
    """Keep probabilities for a single graph against the reference bank."""
    if "refs" not in params:
        raise ShapeMismatch("extractor has no reference bank; pretrain first")
    z = node_embeddings(g, params)
    refs = Tensor(params["refs"])
    sim = _similarity_tensor(z, refs, params)
    return node_keep_probs(sim.data, side=1)


def extract_mask(g: Graph, params: ParamStore) -> np.ndarray:
    """Deterministic topk node mask for a single graph."""
    return topk_mask(extract_probs(g, params), float(params["cfg.rho"]))


def extract_causal(g: Graph, params: ParamStore) -> Graph:
    """Approximate causal subgraph (label-preserving part), deterministic."""
    return induced_subgraph(g, extract_mask(g, params))


def extract_env(g: Graph, params: ParamStore) -> Graph:
    """Approximate environmental subgraph (base part), deterministic."""
    return induced_subgraph(g, extract_mask(g, params))


def predict_from_extraction(g: Graph, params: ParamStore) -> int:
    """Class predicted by the pretrained head from the extraction alone."""
    mask = extract_mask(g, params).astype(np.float64).reshape(-1, 1)
    batch = GraphBatch([g])
    x_full = np.concatenate([g.node_features, batch.deg_onehot], axis=1)
    logits = classify(params, _clf_cfg(params), batch, prefix="clf.",
                      node_features=Tensor(mask * x_full))
    return int(np.argmax(logits.data[0]))


def extraction_iou(bundle: DatasetBundle, params: ParamStore, kind: str,
                   split: str = "id_val") -> float:
    """Mean IoU between extracted node sets and the generator's ground
    truth (motif nodes for causal, base nodes for environmental)."""
    vals = []
    for s in bundle.split(split):
        if "motif_nodes" not in s.meta:
            continue
        g = bundle.sample_graph(s)
        truth = np.zeros(g.num_nodes, dtype=bool)
        truth[np.asarray(s.meta["motif_nodes"], dtype=np.int64)] = True
        if kind == "environmental":
            truth = ~truth
        mask = extract_mask(g, params)
        inter = float(np.sum(mask & truth))
        union = float(np.sum(mask | truth))
        vals.append(inter / union if union else 1.0)
    if not vals:
        raise NoValidPairs(f"no meta-annotated samples in split {split!r}")
    return float(np.mean(vals))
