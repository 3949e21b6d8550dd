"""Feature linear extrapolation: variance-scored feature selection, the
generalized modulo, and paired same-label cross-environment perturbation.

Variant features are selected by contrasting within-label and
within-environment feature variances; selected features of a sample are
linearly extrapolated against a paired sample from another environment
and wrapped back into the feature domain. Structure is never touched.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import DatasetBundle
from .errors import (
    ConfigError,
    DegenerateGroups,
    LabelMismatch,
    NoValidPairs,
    SameEnvironment,
)
from .graph import Graph, LabeledSample
from .metrics import MetricReport, evaluate
from .nn.gnn import GNNConfig, GraphBatch, classify, init_gnn_params
from .nn.losses import batch_cross_entropy
from .nn.params import ParamStore, adam_step
from .nn.tensor import Tensor, concat, gather, index_sum, sigmoid


@dataclass
class FeatXParams:
    """Hyperparameters and trainable scalars of the feature extrapolator."""

    domain: np.ndarray  # [p, 2]
    k1: float = 1.0
    k2: float = 1.0
    T: float = 0.0
    tau: float = 0.1  # sigmoid relaxation temperature
    a: float = 2.0  # gamma shape
    b: float = 1.0  # gamma scale
    pct: float = 0.8  # fraction of training samples replaced per epoch

    def __post_init__(self):
        self.domain = np.asarray(self.domain, dtype=np.float64)
        if self.a <= 0 or self.b <= 0:
            raise ConfigError("gamma parameters must be positive")
        if np.any(self.domain[:, 0] >= self.domain[:, 1]):
            raise ConfigError("feature domain needs lo < hi per feature")


def _group_rows(bundle: DatasetBundle, key) -> dict:
    """Stacked node-feature rows of the training split, grouped by key.

    Graph-level tasks pool every node row of each graph into its group.
    """
    groups = {}
    for s in bundle.train:
        if bundle.task == "graph":
            rows = s.graph.node_features
        else:
            rows = bundle.shared_graph.node_features[s.node_id : s.node_id + 1]
        groups.setdefault(key(s), []).append(rows)
    return {k: np.concatenate(v, axis=0) for k, v in groups.items()}


def variance_components(bundle: DatasetBundle) -> tuple[np.ndarray, np.ndarray]:
    """(mean within-label variance, mean within-environment variance),
    both per feature, population form."""
    by_label = _group_rows(bundle, lambda s: s.hard_label)
    by_env = _group_rows(bundle, lambda s: s.env)
    if len(by_label) < 2 or len(by_env) < 2:
        raise DegenerateGroups("need >= 2 labels and >= 2 environments")
    for name, groups in (("label", by_label), ("environment", by_env)):
        for key, rows in groups.items():
            if rows.shape[0] < 2:
                raise DegenerateGroups(f"{name} group {key} has {rows.shape[0]} row(s)")
    v_label = np.mean([rows.var(axis=0) for rows in by_label.values()], axis=0)
    v_env = np.mean([rows.var(axis=0) for rows in by_env.values()], axis=0)
    return v_label, v_env


def variance_scores(bundle: DatasetBundle, k1: float, k2: float) -> np.ndarray:
    """S_V = k1 * E_y Var_{P_y}[x] - k2 * E_e Var_{P_e}[x], per feature."""
    v_label, v_env = variance_components(bundle)
    return k1 * v_label - k2 * v_env


def mask_from_scores(scores: np.ndarray, T: float,
                     tau: Optional[float] = None) -> np.ndarray:
    """Hard indicator mask [S_V > T], or its sigmoid relaxation if tau given."""
    scores = np.asarray(scores, dtype=np.float64)
    if tau is None:
        return (scores > T).astype(np.float64)
    return 1.0 / (1.0 + np.exp(-(scores - T) / tau))


def generalized_modulo(x: np.ndarray, domain: np.ndarray) -> np.ndarray:
    """Shift each feature by an integer number of range lengths into
    [lo, hi). Exact closure: results never touch hi."""
    x = np.asarray(x, dtype=np.float64)
    domain = np.asarray(domain, dtype=np.float64)
    lo, hi = domain[..., 0], domain[..., 1]
    width = hi - lo
    y = lo + np.mod(x - lo, width)
    # float rounding can land exactly on hi; wrap those onto lo
    return np.where(y >= hi, lo, y)


def sample_lambda(a: float, b: float, rng: np.random.Generator) -> float:
    """Shared extrapolation weight, gamma-distributed (strictly positive)."""
    return float(rng.gamma(a, b))


def featx_features(x1: np.ndarray, x2_row: np.ndarray, mask: np.ndarray,
                   lam: float, lam_prime: float, domain: np.ndarray) -> np.ndarray:
    """Masked extrapolation of a feature matrix against one feature row.

    Selected features become ((1+lam)*x1 - lam'*x2) mod domain; unselected
    columns are copied bitwise from x1.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    wrapped = generalized_modulo((1.0 + lam) * x1 - lam_prime * x2_row, domain)
    out = x1.copy()
    sel = mask > 0.5
    out[:, sel] = wrapped[:, sel]
    return out


def featx_augment(sample1: LabeledSample, sample2: LabeledSample,
                  mask: np.ndarray, lam: float, lam_prime: float,
                  domain: np.ndarray, env: int,
                  rng: Optional[np.random.Generator] = None,
                  x2_row: Optional[np.ndarray] = None) -> LabeledSample:
    """Graph-level FeatX sample: structure and edge features copied from
    sample1, features extrapolated against a random node row of sample2."""
    if sample1.hard_label != sample2.hard_label:
        raise LabelMismatch("pair must share a label")
    if sample1.env == sample2.env:
        raise SameEnvironment("pair must come from different environments")
    if x2_row is None:
        if rng is None:
            raise ConfigError("need an rng (or explicit x2_row) to pick the pair row")
        x2_row = sample2.graph.node_features[
            int(rng.integers(0, sample2.graph.num_nodes))
        ]
    g1 = sample1.graph
    new_x = featx_features(g1.node_features, x2_row, mask, lam, lam_prime, domain)
    g = Graph(num_nodes=g1.num_nodes, edges=g1.edges, node_features=new_x,
              edge_features=g1.edge_features)
    return LabeledSample(label=sample1.label.copy(), env=env, graph=g,
                         meta={"featx": True, "lambda": float(lam)})


def _pair_partners(bundle: DatasetBundle):
    """For each train index, the indices it can pair with."""
    train = bundle.train
    labels = np.array([s.hard_label for s in train])
    envs = np.array([s.env for s in train])
    partners = {}
    for i in range(len(train)):
        ok = np.flatnonzero((labels == labels[i]) & (envs != envs[i]))
        if len(ok):
            partners[i] = ok
    if not partners:
        raise NoValidPairs("no same-label cross-environment pair in training split")
    return partners


def final_mask(params: ParamStore, v_label, v_env) -> np.ndarray:
    """Hard mask from the trained scalars."""
    scores = float(params["k1"]) * v_label - float(params["k2"]) * v_env
    return mask_from_scores(scores, float(params["T"]))


def _soft_mask_tensor(params: ParamStore, v_label, v_env, tau: float) -> Tensor:
    s_v = params.tensor("k1") * Tensor(v_label) - params.tensor("k2") * Tensor(v_env)
    return sigmoid((s_v - params.tensor("T")) * (1.0 / tau))


SPARSITY_WEIGHT = 0.01  # prefer the smallest variant set that helps


def train_with_featx(bundle: DatasetBundle, model_cfg: GNNConfig,
                     fx: FeatXParams, epochs: int, seed: int,
                     lr: float = 1e-3, batch_size: int = 32,
                     weight_decay: float = 0.0):
    """Joint training of the classifier and the invariance mask.

    Each epoch a pct fraction of training samples is replaced by FeatX
    augmentations (soft mask in the forward pass so k1, k2, T receive
    gradients); held-out splits are always evaluated on original
    features. A tiny sparsity term keeps zero-gradient features out of
    the mask. Returns (best params, report, featx env id, final mask).
    """
    rng = np.random.default_rng([seed, 7])
    v_label, v_env = variance_components(bundle)
    p = bundle.p

    params = ParamStore()
    init_gnn_params(params, model_cfg, p, rng)
    params.add("k1", np.asarray(float(fx.k1)))
    params.add("k2", np.asarray(float(fx.k2)))
    params.add("T", np.asarray(float(fx.T)))
    partners = _pair_partners(bundle)
    featx_env = max(bundle.envs) + 1
    report = MetricReport()
    best = (-1.0, None)

    train = bundle.train
    n = len(train)
    for epoch in range(epochs):
        mask_t = None
        if bundle.task == "graph":
            order = rng.permutation(n)
            replaced = set(
                int(i) for i in rng.choice(n, size=int(round(fx.pct * n)),
                                           replace=False)
                if int(i) in partners
            )
            epoch_loss = 0.0
            batches = 0
            for start in range(0, n, batch_size):
                idx = [int(i) for i in order[start : start + batch_size]]
                mask_t = _soft_mask_tensor(params, v_label, v_env, fx.tau)
                feats = []
                for i in idx:
                    g = train[i].graph
                    if i in replaced:
                        j = int(partners[i][rng.integers(0, len(partners[i]))])
                        g2 = train[j].graph
                        row = g2.node_features[int(rng.integers(0, g2.num_nodes))]
                        lam = sample_lambda(fx.a, fx.b, rng)
                        wrapped = generalized_modulo(
                            (1.0 + lam) * g.node_features - lam * row, fx.domain)
                        feats.append(mask_t.reshape(1, -1) * wrapped
                                     + (1.0 - mask_t).reshape(1, -1) * g.node_features)
                    else:
                        feats.append(Tensor(g.node_features))
                batch = GraphBatch([train[i].graph for i in idx])
                x = concat(feats, axis=0)
                logits = classify(params, model_cfg, batch, rng=rng, train=True,
                                  node_features=x)
                targets = np.stack([train[i].label for i in idx])
                loss = batch_cross_entropy(logits, targets).mean()
                loss = loss + SPARSITY_WEIGHT * mask_t.mean()
                loss.backward()
                adam_step(params, lr, weight_decay=weight_decay)
                epoch_loss += loss.item()
                batches += 1
            train_loss = epoch_loss / max(batches, 1)
        else:
            shared = bundle.shared_graph
            x0 = shared.node_features
            replaced = [i for i in rng.choice(n, size=int(round(fx.pct * n)),
                                              replace=False) if int(i) in partners]
            mask_t = _soft_mask_tensor(params, v_label, v_env, fx.tau)
            rows, row_ids = [], []
            for i in replaced:
                i = int(i)
                j = int(partners[i][rng.integers(0, len(partners[i]))])
                node_i = train[i].node_id
                node_j = train[j].node_id
                lam = sample_lambda(fx.a, fx.b, rng)
                wrapped = generalized_modulo(
                    (1.0 + lam) * x0[node_i] - lam * x0[node_j], fx.domain)
                rows.append(mask_t.reshape(1, -1) * wrapped.reshape(1, -1)
                            + (1.0 - mask_t).reshape(1, -1) * x0[node_i : node_i + 1])
                row_ids.append(node_i)
            base = x0.copy()
            if row_ids:
                base[np.asarray(row_ids)] = 0.0
            x = Tensor(base)
            if rows:
                x = x + index_sum(concat(rows, axis=0), np.asarray(row_ids),
                                  shared.num_nodes)
            batch = GraphBatch([shared])
            logits = classify(params, model_cfg, batch, rng=rng, train=True,
                              node_features=x)
            ids = np.array([s.node_id for s in train])
            targets = np.stack([s.label for s in train])
            loss = batch_cross_entropy(gather(logits, ids), targets).mean()
            loss = loss + SPARSITY_WEIGHT * mask_t.mean()
            loss.backward()
            adam_step(params, lr, weight_decay=weight_decay)
            train_loss = loss.item()

        accs = {split: evaluate(params, model_cfg, bundle, split)
                for split in ("id_val", "id_test", "ood_val", "ood_test")}
        report.add_row(epoch, train_loss, accs["id_val"], accs["id_test"],
                       accs["ood_val"], accs["ood_test"])
        if accs["ood_val"] > best[0]:
            best = (accs["ood_val"], params.copy())

    final = best[1] if best[1] is not None else params
    return final, report, featx_env, final_mask(final, v_label, v_env)
