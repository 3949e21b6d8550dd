"""Structural extrapolation: the three augmentation options, label
assignment, environment creation, and the variance-regularized objective.

Option 1 keeps a single causal extraction, option 2 splices one causal
extraction with f environmental extractions, option 3 splices f whole
training graphs. Augmented samples carry lineage meta so the motif-count
oracle can recompute their labels from ground truth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bridge import (
    cross_pairs,
    encode,
    random_bridges_connected,
    sample_bridge_count,
    sample_bridges_connected,
)
from .dataset import DatasetBundle
from .errors import ConfigError, MissingCheckpoint, NoCausalComponent
from .extract import extract_probs, node_keep_probs, topk_mask, weighted_similarity
from .graph import LabeledSample, component_of_nodes, induced_subgraph, splice
from .nn.tensor import Tensor, stack_scalars

CONSENSUS_PARTNERS = 5  # partners averaged for augmentation-time extraction


@dataclass
class SpliceConfig:
    options: tuple = (1, 3)
    f: int = 2
    pct: float = 1.0
    bridge_mode: str = "vae"  # vae | random
    shift_domain: str = "size"  # size | base
    gamma: float = 0.0  # VREx weight (used by the harness)
    rho_causal: Optional[float] = None  # None = extractor default
    rho_env: Optional[float] = None

    def __post_init__(self):
        self.options = tuple(sorted(set(int(o) for o in self.options)))
        if not self.options or any(o not in (1, 2, 3) for o in self.options):
            raise ConfigError(f"options must be a nonempty subset of 1/2/3: {self.options}")
        if self.f < 2 and any(o in (2, 3) for o in self.options):
            raise ConfigError("options 2 and 3 need f >= 2")
        if self.bridge_mode not in ("vae", "random"):
            raise ConfigError(f"bridge_mode must be vae|random, got {self.bridge_mode}")
        if self.shift_domain not in ("size", "base"):
            raise ConfigError(f"shift_domain must be size|base, got {self.shift_domain}")


def assign_label(component_labels: Sequence[np.ndarray],
                 causal_flags: Sequence[bool]) -> np.ndarray:
    """Mean of the causal-flagged component labels."""
    flagged = [np.asarray(y, dtype=np.float64)
               for y, c in zip(component_labels, causal_flags) if c]
    if not flagged:
        raise NoCausalComponent("no causal component to label from")
    return np.mean(flagged, axis=0)


def _consensus_probs(bundle, idx, extractor, kind, rng):
    """Keep probabilities averaged over several valid partners.

    Falls back to the extractor's reference bank when no partner exists.
    """

    train = bundle.train
    s = train[idx]
    g = bundle.sample_graph(s)
    if kind == "causal":
        partners = [j for j, t in enumerate(train)
                    if t.hard_label == s.hard_label and t.env != s.env and j != idx]
    else:
        partners = [j for j, t in enumerate(train)
                    if t.env == s.env and t.hard_label != s.hard_label and j != idx]
    if not partners:
        return extract_probs(g, extractor)
    picks = rng.choice(len(partners), size=min(CONSENSUS_PARTNERS, len(partners)),
                       replace=False)
    probs = np.zeros(g.num_nodes)
    for c in picks:
        sim = weighted_similarity(
            g, bundle.sample_graph(train[partners[int(c)]]), extractor)
        probs += node_keep_probs(sim, side=1)
    return probs / len(picks)


def _extract_component(bundle, idx, extractor, kind, rng, rho=None):
    """(subgraph, lineage record) for one extracted component."""
    s = bundle.train[idx]
    g = bundle.sample_graph(s)
    rho = float(extractor["cfg.rho"]) if rho is None else rho
    mask = topk_mask(_consensus_probs(bundle, idx, extractor, kind, rng), rho)
    sub = induced_subgraph(g, mask)
    motif_nodes = s.meta.get("motif_nodes")
    intact = None
    if motif_nodes is not None:
        intact = bool(mask[np.asarray(motif_nodes, dtype=np.int64)].all())
    record = {
        "src": idx,
        "kind": kind,
        "label_class": s.hard_label,
        "motif_kind": s.meta.get("motif_kind"),
        "motif_intact": intact,
    }
    return sub, record


def _whole_component(bundle, idx):
    s = bundle.train[idx]
    return bundle.sample_graph(s), {
        "src": idx,
        "kind": "whole",
        "label_class": s.hard_label,
        "motif_kind": s.meta.get("motif_kind"),
        "motif_intact": True if "motif_nodes" in s.meta else None,
    }


def _bridge_components(components, cfg, checkpoints, rng):
    """Sample a bridge set joining the components into one graph."""
    if cfg.bridge_mode == "random":
        b = random_bridges_connected(components, 1, rng, q=0)
        return b
    gen = checkpoints["bridge"]
    B = sample_bridge_count(components, gen, rng)
    latent = encode(components, gen)

    n_pairs = len(cross_pairs(component_of_nodes(components)))
    B = max(1, min(B, n_pairs))
    return sample_bridges_connected(components, latent, B, gen, rng)


def make_option1(bundle: DatasetBundle, extractors: dict, rng,
                 rho: Optional[float] = None):
    """Single causal extraction of a uniformly drawn training graph."""
    idx = int(rng.integers(0, len(bundle.train)))
    sub, record = _extract_component(bundle, idx, extractors["causal"],
                                     "causal", rng, rho)
    src = bundle.train[idx]

    return LabeledSample(
        label=assign_label([src.label], [True]),
        env=src.env,  # reassigned by assign_environments
        graph=sub,
        meta={"option": 1, "components": [record]},
    )


def make_option2(bundle: DatasetBundle, extractors: dict, checkpoints: dict,
                 cfg: SpliceConfig, rng):
    """Causal extraction spliced with f environmental extractions."""

    idx = int(rng.integers(0, len(bundle.train)))
    causal_sub, causal_rec = _extract_component(
        bundle, idx, extractors["causal"], "causal", rng, cfg.rho_causal)
    components = [causal_sub]
    records = [causal_rec]
    for _ in range(cfg.f):
        j = int(rng.integers(0, len(bundle.train)))
        env_sub, env_rec = _extract_component(
            bundle, j, extractors["env"], "environmental", rng, cfg.rho_env)
        components.append(env_sub)
        records.append(env_rec)
    bridges = _bridge_components(components, cfg, checkpoints, rng)
    g = splice(components, bridges)
    labels = [bundle.train[r["src"]].label for r in records]
    flags = [r["kind"] != "environmental" for r in records]
    return LabeledSample(
        label=assign_label(labels, flags),
        env=bundle.train[idx].env,
        graph=g,
        meta={"option": 2, "components": records},
    )


def make_option3(bundle: DatasetBundle, checkpoints: dict, cfg: SpliceConfig,
                 rng, min_total_size: Optional[int] = None):
    """f whole training graphs spliced; soft label = mean of sources.

    Under a size shift the component sizes must sum beyond the largest
    training graph (the extrapolation theorem's construction), so draws
    are rejected until they do.
    """

    n = len(bundle.train)
    sizes = [bundle.sample_graph(s).num_nodes for s in bundle.train]
    for _ in range(1000):
        picks = [int(rng.integers(0, n)) for _ in range(cfg.f)]
        if min_total_size is None or sum(sizes[i] for i in picks) > min_total_size:
            break
    else:
        raise ConfigError("could not draw components exceeding the size bound")
    components, records = [], []
    for i in picks:
        g, rec = _whole_component(bundle, i)
        components.append(g)
        records.append(rec)
    bridges = _bridge_components(components, cfg, checkpoints, rng)
    g = splice(components, bridges)
    labels = [bundle.train[r["src"]].label for r in records]
    return LabeledSample(
        label=assign_label(labels, [True] * len(records)),
        env=bundle.train[picks[0]].env,
        graph=g,
        meta={"option": 3, "components": records},
    )


def assign_environments(selected_options: Sequence[int], shift_domain: str,
                        existing_envs: Sequence[int]) -> dict:
    """Map each selected option to its new environment id.

    Size shift: one new environment per option (their size distributions
    differ). Base shift: option 1 (no base) gets one environment; options
    2 and 3 (multiple bases combined) share a second.
    """
    selected = sorted(set(selected_options))
    next_id = (max(existing_envs) + 1) if existing_envs else 0
    mapping = {}
    if shift_domain == "size":
        for opt in selected:
            mapping[opt] = next_id
            next_id += 1
    else:
        if 1 in selected:
            mapping[1] = next_id
            next_id += 1
        rest = [o for o in selected if o != 1]
        if rest:
            for o in rest:
                mapping[o] = next_id
            next_id += 1
    return mapping


def vrex_objective(per_env_mean_losses, gamma: float, env_sizes=None):
    """Overall mean loss plus gamma times the population variance of the
    per-environment mean losses. Accepts floats or scalar Tensors."""
    losses = list(per_env_mean_losses)
    k = len(losses)
    if k == 0:
        raise ConfigError("vrex_objective needs at least one environment")
    tensors = [x if isinstance(x, Tensor) else Tensor(float(x)) for x in losses]
    vec = stack_scalars(tensors)
    if env_sizes is None:
        overall = vec.mean()
    else:
        w = np.asarray(env_sizes, dtype=np.float64)
        overall = (vec * (w / w.sum())).sum()
    mu = vec.mean()
    centered = vec - mu.reshape(1)
    var = (centered * centered).mean()
    out = overall + gamma * var
    if not out.requires_grad:
        return out.item()
    return out


def _required_checkpoints(cfg: SpliceConfig):
    need = set()
    if 1 in cfg.options or 2 in cfg.options:
        need.add("causal")
    if 2 in cfg.options:
        need.add("env")
    if cfg.bridge_mode == "vae" and (2 in cfg.options or 3 in cfg.options):
        need.add("bridge")
    return need


def run_gsplice(bundle: DatasetBundle, cfg: SpliceConfig, checkpoints: dict,
                seed: int) -> DatasetBundle:
    """Materialize the augmented bundle: ceil(pct * |train|) new samples,
    spread uniformly over the selected options, in new environments."""
    missing = _required_checkpoints(cfg) - set(checkpoints or {})
    if missing:
        raise MissingCheckpoint(f"missing checkpoints: {sorted(missing)}")
    extractors = {"causal": checkpoints.get("causal"), "env": checkpoints.get("env")}
    n_aug = math.ceil(cfg.pct * len(bundle.train))
    options = list(cfg.options)
    quotas = {opt: n_aug // len(options) for opt in options}
    for opt in options[: n_aug % len(options)]:
        quotas[opt] += 1
    env_map = assign_environments(options, cfg.shift_domain, bundle.envs)
    max_train_size = max(bundle.sample_graph(s).num_nodes for s in bundle.train)

    augmented = []
    counter = 0
    for opt in options:
        for _ in range(quotas[opt]):
            rng = np.random.default_rng([seed, 1000, counter])
            counter += 1
            if opt == 1:
                s = make_option1(bundle, extractors, rng, cfg.rho_causal)
            elif opt == 2:
                s = make_option2(bundle, extractors, checkpoints, cfg, rng)
            else:
                bound = max_train_size if cfg.shift_domain == "size" else None
                s = make_option3(bundle, checkpoints, cfg, rng, min_total_size=bound)
            meta = dict(s.meta)
            meta["option"] = opt

            augmented.append(LabeledSample(label=s.label, env=env_map[opt],
                                           graph=s.graph, meta=meta))
    new_train = list(bundle.train) + augmented
    return bundle.with_train(new_train, extra_envs=env_map.values())


def motif_count_label(sample, num_classes: int) -> Optional[np.ndarray]:
    """Oracle label from ground truth: the distribution of motif kinds
    over the intact motifs the sample contains (None if it has none)."""
    meta = sample.meta
    if "components" in meta:
        kinds = [r["motif_kind"] for r in meta["components"]
                 if r.get("motif_intact") and r.get("motif_kind") is not None]
    elif "motif_kind" in meta:
        kinds = [meta["motif_kind"]]
    else:
        return None
    if not kinds:
        return None
    y = np.zeros(num_classes)
    for k in kinds:
        y[int(k)] += 1.0
    return y / y.sum()


def label_match_rates(bundle: DatasetBundle) -> dict:
    """Per-option fraction of augmented samples whose oracle label equals
    the assigned label exactly."""
    stats = {}
    for s in bundle.train:
        opt = s.meta.get("option")
        if opt is None:
            continue
        oracle = motif_count_label(s, bundle.num_classes)
        ok = oracle is not None and np.array_equal(oracle, s.label)
        hit, tot = stats.get(opt, (0, 0))
        stats[opt] = (hit + int(ok), tot + 1)
    return {opt: hit / tot for opt, (hit, tot) in stats.items()}
