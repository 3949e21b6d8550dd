"""Experiment orchestration: ERM / G-Splice / G-Splice+R / FeatX runs,
checkpoint selection, and the theorem-verification suites."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import DatasetBundle, read_dataset, write_dataset
from .errors import ConfigError, EvalError, MissingCheckpoint
from .extract import extract_causal, pretrain_extractor
from .featx import (
    FeatXParams,
    generalized_modulo,
    sample_lambda,
    train_with_featx,
    variance_components,
)
from .graph import Bridge, BridgeSet, Graph, splice
from .gsplice import SpliceConfig, label_match_rates, run_gsplice, vrex_objective
from .metrics import MetricReport, emit_curves, evaluate
from .nn.gnn import GNNConfig, GraphBatch, classify, init_gnn_params
from .nn.losses import batch_cross_entropy
from .nn.params import ParamStore, adam_step
from .nn.tensor import Tensor, gather, stack_scalars
from .synth import GenConfig, generate

METHODS = ("erm", "gsplice", "gsplice-r", "featx")


@dataclass
class RunConfig:
    method: str = "erm"
    epochs: int = 100
    seed: int = 0
    lr: float = 1e-3
    batch_size: int = 32
    hidden_dim: int = 64
    num_layers: int = 3
    dropout: float = 0.5
    weight_decay: float = 0.0
    gamma: float = 10.0  # VREx weight for gsplice-r
    splice: Optional[SpliceConfig] = None
    featx: Optional[FeatXParams] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")


def backbone_config(bundle: DatasetBundle, cfg: RunConfig) -> GNNConfig:
    """GIN for graph-level tasks, GCN for node-level tasks."""
    if bundle.task == "graph":
        return GNNConfig(kind="GIN", num_layers=cfg.num_layers,
                         hidden_dim=cfg.hidden_dim, num_classes=bundle.num_classes,
                         pooling="mean", dropout=cfg.dropout, degree_onehot=True)
    return GNNConfig(kind="GCN", num_layers=cfg.num_layers,
                     hidden_dim=cfg.hidden_dim, num_classes=bundle.num_classes,
                     pooling="none", dropout=cfg.dropout, degree_onehot=True)


def _train_classifier(bundle: DatasetBundle, cfg: RunConfig,
                      use_vrex: bool) -> tuple[ParamStore, MetricReport]:
    """Mini-batch training with optional per-batch variance regularizer."""
    model_cfg = backbone_config(bundle, cfg)
    rng = np.random.default_rng([cfg.seed, 11])
    params = ParamStore()
    init_gnn_params(params, model_cfg, bundle.p, rng)
    train = bundle.train
    n = len(train)
    report = MetricReport()
    best = (-1.0, None)

    node_batch = None
    node_ids = targets = envs = None
    if bundle.task == "node":
        node_batch = GraphBatch([bundle.shared_graph])
        node_ids = np.array([s.node_id for s in train])
        targets = np.stack([s.label for s in train])
        envs = np.array([s.env for s in train])

    for epoch in range(cfg.epochs):
        if bundle.task == "graph":
            order = rng.permutation(n)
            epoch_loss, batches = 0.0, 0
            for start in range(0, n, cfg.batch_size):
                idx = [int(i) for i in order[start : start + cfg.batch_size]]
                batch = GraphBatch([train[i].graph for i in idx])
                logits = classify(params, model_cfg, batch, rng=rng, train=True)
                y = np.stack([train[i].label for i in idx])
                losses = batch_cross_entropy(logits, y)
                if use_vrex and cfg.gamma > 0:
                    batch_envs = np.array([train[i].env for i in idx])
                    loss = _vrex_batch_loss(losses, batch_envs, cfg.gamma)
                else:
                    loss = losses.mean()
                loss.backward()
                adam_step(params, cfg.lr, weight_decay=cfg.weight_decay)
                epoch_loss += loss.item()
                batches += 1
            train_loss = epoch_loss / max(batches, 1)
        else:
            logits = classify(params, model_cfg, node_batch, rng=rng, train=True)
            losses = batch_cross_entropy(gather(logits, node_ids), targets)
            if use_vrex and cfg.gamma > 0:
                loss = _vrex_batch_loss(losses, envs, cfg.gamma)
            else:
                loss = losses.mean()
            loss.backward()
            adam_step(params, cfg.lr, weight_decay=cfg.weight_decay)
            train_loss = loss.item()

        accs = {split: evaluate(params, model_cfg, bundle, split)
                for split in ("id_val", "id_test", "ood_val", "ood_test")}
        report.add_row(epoch, train_loss, accs["id_val"], accs["id_test"],
                       accs["ood_val"], accs["ood_test"])
        if accs["ood_val"] > best[0]:
            best = (accs["ood_val"], params.copy())
    return (best[1] if best[1] is not None else params), report


def _vrex_batch_loss(losses: Tensor, batch_envs: np.ndarray, gamma: float) -> Tensor:
    """Mean loss over the batch plus gamma times the variance of the
    per-environment mean losses present in the batch."""
    env_means, sizes = [], []
    for e in np.unique(batch_envs):
        idx = np.flatnonzero(batch_envs == e)
        env_means.append(gather(losses, idx).mean())
        sizes.append(len(idx))
    return vrex_objective(env_means, gamma, env_sizes=sizes)


def train(bundle: DatasetBundle, cfg: RunConfig, checkpoints: Optional[dict] = None):
    """Run one method end to end; returns (params, report, extras)."""
    extras = {}
    if cfg.method == "erm":
        params, report = _train_classifier(bundle, cfg, use_vrex=False)
    elif cfg.method in ("gsplice", "gsplice-r"):
        splice_cfg = cfg.splice or SpliceConfig()
        if "augmented" in (checkpoints or {}):
            aug = checkpoints["augmented"]
        else:
            if checkpoints is None:
                raise MissingCheckpoint("gsplice needs extractor/bridge checkpoints")
            aug = run_gsplice(bundle, splice_cfg, checkpoints, cfg.seed)
        extras["augmented"] = aug
        params, report = _train_classifier(aug, cfg, use_vrex=(cfg.method == "gsplice-r"))
    else:
        model_cfg = backbone_config(bundle, cfg)
        fx = cfg.featx or FeatXParams(domain=bundle.domain)
        params, report, featx_env, mask = train_with_featx(
            bundle, model_cfg, fx, cfg.epochs, cfg.seed, lr=cfg.lr,
            batch_size=cfg.batch_size, weight_decay=cfg.weight_decay)
        extras["featx_env"] = featx_env
        extras["mask"] = mask
    return params, report, extras


# ---------------------------------------------------------------------------
# verification suites


def _suite_splice_algebra(rng: np.random.Generator, trials: int = 10_000) -> dict:
    from .graph import component_of_nodes
    from .bridge import cross_pairs, random_bridges

    failures = []
    for t in range(trials):
        k = int(rng.integers(1, 5))
        comps = []
        for _ in range(k):
            n = int(rng.integers(1, 9))
            possible = [(i, j) for i in range(n) for j in range(i + 1, n)]
            m = int(rng.integers(0, len(possible) + 1)) if possible else 0
            picks = rng.choice(len(possible), size=m, replace=False) if m else []
            comps.append(Graph(
                num_nodes=n,
                edges=tuple(possible[int(i)] for i in picks),
                node_features=rng.normal(size=(n, 2)),
            ))
        pairs = cross_pairs(component_of_nodes(comps))
        b = int(rng.integers(0, min(len(pairs), 6) + 1)) if len(pairs) else 0
        bridges = random_bridges(comps, b, rng) if b else BridgeSet(())
        g = splice(comps, bridges)
        if g.num_nodes != sum(c.num_nodes for c in comps):
            failures.append((t, "node count"))
        if g.num_edges != sum(c.num_edges for c in comps) + len(bridges):
            failures.append((t, "edge count"))
        if failures:
            break
    return {"passed": not failures, "trials": trials, "failures": failures[:3]}


def _gradcheck(build_loss, params: ParamStore, h: float = 1e-4,
               tol: float = 1e-4, max_entries: int = 400) -> float:
    """Worst relative error between backprop and central differences.

    Entries that fail at step h are re-measured at h/100: a secant that
    crosses a ReLU kink is not a derivative estimate. Gradients below the
    truncation noise floor are compared absolutely.
    """
    params.zero_grad()
    build_loss().backward()
    grads = {k: v.copy() for k, v in params.grads.items()}
    params.zero_grad()

    def fd_at(value, ix, step):
        old = value[ix]
        value[ix] = old + step
        lp = build_loss().item()
        value[ix] = old - step
        lm = build_loss().item()
        value[ix] = old
        return (lp - lm) / (2 * step)

    def rel_err(fd, an):
        denom = max(abs(fd), abs(an))
        if denom < 1e-5:
            return 0.0 if abs(fd - an) <= 1e-6 else 1.0
        return abs(fd - an) / denom

    worst = 0.0
    checked = 0
    for name in params.names():
        if name.startswith("cfg."):
            continue
        value = params.values[name]
        it = np.nditer(value, flags=["multi_index"])
        for _ in it:
            if checked >= max_entries:
                return worst
            ix = it.multi_index
            an = grads[name][ix]
            err = rel_err(fd_at(value, ix, h), an)
            if err > tol:
                err = rel_err(fd_at(value, ix, h / 100.0), an)
            worst = max(worst, err)
            checked += 1
    return worst


def _suite_gradcheck(rng: np.random.Generator) -> dict:
    from .bridge import (_decode_tensor, _encode_tensors, cross_pairs,
                         new_bridge_generator, vae_loss)
    from .graph import component_of_nodes

    results = {}
    g = Graph(6, ((0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (1, 4)),
              rng.normal(size=(6, 3)))
    batch = GraphBatch([g])
    y = rng.dirichlet(np.ones(3), size=1)

    for kind in ("GIN", "GCN"):
        cfg = GNNConfig(kind=kind, num_layers=2, hidden_dim=6, num_classes=3,
                        dropout=0.0)
        ps = ParamStore()
        init_gnn_params(ps, cfg, 3, rng)
        worst = _gradcheck(
            lambda: batch_cross_entropy(classify(ps, cfg, batch), y).mean(), ps)
        results[kind.lower()] = worst

    # cVAE loss end to end
    comps = [Graph(3, ((0, 1), (1, 2)), rng.normal(size=(3, 2))),
             Graph(2, ((0, 1),), rng.normal(size=(2, 2)))]
    gen = new_bridge_generator(2, 0, rng, hidden=6, f_lat=4)
    true = BridgeSet((Bridge(u=1, v=4, comp_u=0, comp_v=1),))
    eps = rng.standard_normal((5, 4))

    def vae_build():
        from .nn.tensor import exp as texp

        mu, logvar, _ = _encode_tensors(comps, gen)
        z = mu + texp(logvar * 0.5) * eps
        pairs = cross_pairs(component_of_nodes(comps))
        logits, attr = _decode_tensor(z, pairs, gen)
        return vae_loss((mu, logvar), true, (pairs, logits, attr), 1.0, 0.5)

    results["cvae"] = _gradcheck(vae_build, gen)
    passed = all(v <= 1e-4 for v in results.values())
    return {"passed": passed, "worst_rel_err": results}


def _suite_modulo(rng: np.random.Generator, trials: int = 1_000_000) -> dict:
    lo = rng.uniform(-5, 4, size=trials)
    hi = lo + rng.uniform(1e-3, 8, size=trials)
    x = rng.uniform(-50, 50, size=trials)
    y = generalized_modulo(x, np.stack([lo, hi], axis=1))
    ok = np.all((y >= lo) & (y < hi))
    return {"passed": bool(ok), "trials": trials,
            "violations": int(np.sum(~((y >= lo) & (y < hi))))}


def _suite_thm31(bundle: DatasetBundle, augmented: DatasetBundle) -> dict:
    train_sizes = [bundle.sample_graph(s).num_nodes for s in bundle.train]
    lo, hi = min(train_sizes), max(train_sizes)
    opt1 = [s.graph.num_nodes for s in augmented.train if s.meta.get("option") == 1]
    opt3 = [s.graph.num_nodes for s in augmented.train if s.meta.get("option") == 3]
    opt3_exact = all(
        s.graph.num_nodes == sum(
            bundle.sample_graph(bundle.train[r["src"]]).num_nodes
            for r in s.meta["components"])
        for s in augmented.train if s.meta.get("option") == 3
    )
    details = {
        "train_min": lo, "train_max": hi,
        "opt1_max": max(opt1) if opt1 else None,
        "opt3_min": min(opt3) if opt3 else None,
        "opt1_all_below": bool(opt1) and max(opt1) < lo,
        "opt3_all_above": bool(opt3) and min(opt3) > hi,
        "opt3_size_additive": opt3_exact,
    }
    details["passed"] = (details["opt1_all_below"] and details["opt3_all_above"]
                         and opt3_exact)
    return details


def _suite_thm32(augmented: DatasetBundle) -> dict:
    rates = label_match_rates(augmented)
    passed = all(
        rate == 1.0 if opt == 3 else rate >= 0.9 for opt, rate in rates.items()
    )
    return {"passed": passed, "match_rates": {int(k): v for k, v in rates.items()}}


def _suite_thm51(rng: np.random.Generator, n_aug: int = 10_000,
                 bins: int = 20) -> dict:
    """Coverage of [0,1) by FeatX on a 1-dim variant feature supported on
    two environments (values 0.1 and 0.2)."""
    domain = np.array([[0.0, 1.0]])
    support = [0.1, 0.2]
    hits = np.zeros(bins, dtype=bool)
    for _ in range(n_aug):
        x1, x2 = (support if rng.random() < 0.5 else support[::-1])
        lam = sample_lambda(2.0, 1.0, rng)
        val = generalized_modulo(np.array([[(1 + lam) * x1 - lam * x2]]), domain)
        hits[min(int(val[0, 0] * bins), bins - 1)] = True
    coverage = float(hits.mean())
    return {"passed": coverage >= 0.95, "coverage": coverage, "bins": bins}


def _suite_determinism(tmpdir: Path) -> dict:
    cfg = GenConfig(task="motif-base", seed=123, samples_per_split={
        "train": 20, "id_val": 5, "id_test": 5, "ood_val": 5, "ood_test": 5})
    a = write_dataset(generate(cfg), tmpdir / "a.jsonl")
    b = write_dataset(generate(cfg), tmpdir / "b.jsonl")
    same_bytes = a.read_bytes() == b.read_bytes()
    bundle = read_dataset(a)
    run_cfg = RunConfig(method="erm", epochs=3, seed=5, hidden_dim=8)
    _, rep1, _ = train(bundle, run_cfg)
    _, rep2, _ = train(bundle, run_cfg)
    same_report = rep1.to_dict() == rep2.to_dict()
    return {"passed": same_bytes and same_report,
            "dataset_bytes_equal": same_bytes, "reports_equal": same_report}


def _default_thm_fixture(seed: int = 0):
    """Small motif-size bundle plus random-bridge augmentation, enough to
    exercise the size-direction checks without pretraining."""
    bundle = generate(GenConfig(task="motif-size", seed=seed, samples_per_split={
        "train": 60, "id_val": 10, "id_test": 10, "ood_val": 10, "ood_test": 10}))
    rng = np.random.default_rng(seed)
    extractor, _ = pretrain_extractor(bundle, "causal", epochs=10, rng=rng,
                                      pairs_per_epoch=64)
    cfg = SpliceConfig(options=(1, 3), f=2, pct=0.5, bridge_mode="random",
                       shift_domain="size")
    augmented = run_gsplice(bundle, cfg, {"causal": extractor}, seed)
    return bundle, augmented


def verify(suite: str, bundle: Optional[DatasetBundle] = None,
           augmented: Optional[DatasetBundle] = None,
           seed: int = 0, tmpdir=None) -> dict:
    """Run one verification suite; returns a report dict with `passed`."""
    rng = np.random.default_rng([seed, 17])
    if suite == "splice-algebra":
        return _suite_splice_algebra(rng)
    if suite == "gradcheck":
        return _suite_gradcheck(rng)
    if suite == "modulo":
        return _suite_modulo(rng)
    if suite == "thm51":
        return _suite_thm51(rng)
    if suite == "determinism":
        import tempfile

        with tempfile.TemporaryDirectory() as td:
            return _suite_determinism(Path(tmpdir or td))
    if suite in ("thm31", "thm32"):
        if bundle is None or augmented is None:
            bundle, augmented = _default_thm_fixture(seed)
        return _suite_thm31(bundle, augmented) if suite == "thm31" \
            else _suite_thm32(augmented)
    raise ConfigError(f"unknown suite {suite!r}")


ALL_SUITES = ("splice-algebra", "gradcheck", "modulo", "thm31", "thm32",
              "thm51", "determinism")
