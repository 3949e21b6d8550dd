"""Deterministic generators for the synthetic OOD benchmarks.

Three families: motif graphs (base graph + one labeled motif, shifted in
size or base kind), color graphs (motif labels with per-environment node
colors), and a node-level colored Barabasi-Albert graph with attached
houses. Per-sample RNG streams are derived from (seed, split, index) so
output is independent of generation order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import networkx as nx
import numpy as np

from .dataset import SPLITS, DatasetBundle
from .errors import ConfigError
from .graph import Bridge, BridgeSet, Graph, LabeledSample, splice

MOTIF_KINDS = ("house", "cycle", "crane")
BASE_KINDS = ("wheel", "tree", "ladder")
# Held-out base for the base shift. A star's hub-with-leaves pattern is
# far from every training base; ladder-like shapes read as familiar
# degree patterns and barely move the classifier.
OOD_BASE_KIND = "star"

# 5-node motif templates (edge lists).
MOTIF_EDGES = {
    "house": ((0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)),
    "cycle": ((0, 1), (1, 2), (2, 3), (3, 4), (4, 0)),
    "crane": ((0, 1), (1, 2), (2, 0), (2, 3), (3, 4)),
}
MOTIF_SIZE = 5

# roles inside the house template: roof / roof-adjacent / floor
HOUSE_ROLES = {0: "middle", 1: "middle", 2: "bottom", 3: "bottom", 4: "top"}

# Named palette used for color environments, values in [0, 1]^3.
COLOR_PALETTE = (
    ("red", (1.0, 0.0, 0.0)),
    ("green", (0.0, 1.0, 0.0)),
    ("blue", (0.0, 0.0, 1.0)),
    ("yellow", (1.0, 1.0, 0.0)),
    ("purple", (1.0, 0.0, 1.0)),
    ("orange", (1.0, 0.5, 0.0)),
    ("cyan", (0.0, 1.0, 1.0)),
)

DEFAULT_COUNTS = {
    "train": 300,
    "id_val": 60,
    "id_test": 60,
    "ood_val": 60,
    "ood_test": 60,
}

# Whole-graph node counts (motif included) per split.
SIZE_SHIFT_RANGES = {
    "train": (15, 40),
    "id_val": (15, 40),
    "id_test": (15, 40),
    "ood_val": (45, 55),
    "ood_test": (60, 90),
}
# Base shift: graphs big enough that the base dominates prediction, with
# ceil(0.25 * n) leaving the 5-node motif at least one node of slack.
BASE_SHIFT_RANGES = {s: (21, 25) for s in SPLITS}
BASE_SHIFT_RHO = {"causal": 0.25, "environmental": 0.75}
# Color shift: small graphs, shift carried purely by node colors.
FLAT_SIZE_RANGES = {s: (15, 17) for s in SPLITS}

# Training-size bands used as environments under the size shift.
SIZE_ENV_BANDS = ((15, 23), (24, 31), (32, 40))


@dataclass
class GenConfig:
    task: str  # motif-size | motif-base | color-graph | cbas-node
    seed: int = 0
    samples_per_split: dict = field(default_factory=dict)
    size_ranges: dict = field(default_factory=dict)
    base_kinds: tuple = BASE_KINDS
    motif_kinds: tuple = MOTIF_KINDS
    color_palette: tuple = COLOR_PALETTE
    noise: float = 0.05
    num_color_envs: int = 5
    cbas_base_nodes: int = 150
    cbas_num_houses: int = 40

    def counts(self) -> dict:
        out = dict(DEFAULT_COUNTS)
        out.update(self.samples_per_split)
        return out

    def ranges(self) -> dict:
        defaults = {
            "motif-size": SIZE_SHIFT_RANGES,
            "motif-base": BASE_SHIFT_RANGES,
        }.get(self.task, FLAT_SIZE_RANGES)
        out = dict(defaults)
        out.update(self.size_ranges)
        return out


def _rng(cfg: GenConfig, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, SPLITS.index(split), index])


def motif_graph(kind: str) -> Graph:
    return Graph(
        num_nodes=MOTIF_SIZE,
        edges=MOTIF_EDGES[kind],
        node_features=np.ones((MOTIF_SIZE, 1)),
    )


def base_graph(kind: str, size: int, rng: np.random.Generator) -> Graph:
    """Base (environmental) graph of exactly `size` nodes."""
    if size < 4:
        raise ConfigError(f"base graphs need >= 4 nodes, got {size}")
    if kind == "wheel":
        edges = [(0, i) for i in range(1, size)]
        edges += [(i, i + 1) for i in range(1, size - 1)] + [(size - 1, 1)]
    elif kind == "tree":
        # random recursive tree: node i attaches to a uniform earlier node
        edges = [(int(rng.integers(0, i)), i) for i in range(1, size)]
    elif kind == "ladder":
        half = size // 2
        g = nx.ladder_graph(half)
        edges = list(g.edges())
        if size % 2:
            edges.append((size - 2, size - 1))  # pendant to keep exact size
    elif kind == "star":
        edges = [(0, i) for i in range(1, size)]
    elif kind == "ba":
        g = nx.barabasi_albert_graph(size, 1, seed=int(rng.integers(0, 2**31)))
        edges = list(g.edges())
    else:
        raise ConfigError(f"unknown base kind {kind!r}")
    return Graph(num_nodes=size, edges=tuple(edges), node_features=np.ones((size, 1)))


def attach_motif(
    base: Graph, motif: Graph, rng: np.random.Generator
) -> tuple[Graph, dict]:
    """Splice base + motif with one recorded attachment edge."""
    u = int(rng.integers(0, base.num_nodes))
    v = base.num_nodes + int(rng.integers(0, motif.num_nodes))
    bridges = BridgeSet((Bridge(u=u, v=v, comp_u=0, comp_v=1),))
    g = splice([base, motif], bridges)
    meta = {
        "motif_nodes": list(range(base.num_nodes, base.num_nodes + motif.num_nodes)),
        "bridge_edges": [[u, v]],
    }
    return g, meta


def _one_hot(k: int, n: int) -> np.ndarray:
    y = np.zeros(n)
    y[k] = 1.0
    return y


def _check_disjoint_ranges(ranges: dict):
    tr_lo, tr_hi = ranges["train"]
    for split in ("ood_val", "ood_test"):
        lo, hi = ranges[split]
        if lo <= tr_hi and tr_lo <= hi:
            raise ConfigError(
                f"{split} size range {ranges[split]} overlaps training range "
                f"{ranges['train']}"
            )


def _size_env(size: int) -> int:
    for env, (lo, hi) in enumerate(SIZE_ENV_BANDS):
        if lo <= size <= hi:
            return env
    return 0


def gen_motif_dataset(cfg: GenConfig) -> DatasetBundle:
    """Motif-classification graphs under a size or base covariate shift."""
    if cfg.task not in ("motif-size", "motif-base"):
        raise ConfigError(f"task {cfg.task!r} is not a motif task")
    ranges = cfg.ranges()
    if cfg.task == "motif-size":
        _check_disjoint_ranges(ranges)
        train_bases = list(cfg.base_kinds)
        ood_bases = list(cfg.base_kinds)
        envs = list(range(len(SIZE_ENV_BANDS)))
    else:
        train_bases = [k for k in ("wheel", "tree") if k in cfg.base_kinds]
        ood_bases = [OOD_BASE_KIND]
        if not train_bases:
            raise ConfigError("base shift needs wheel or tree as a training base")
        envs = list(range(len(train_bases)))

    num_classes = len(cfg.motif_kinds)
    samples = {s: [] for s in SPLITS}
    for split in SPLITS:
        lo, hi = ranges[split]
        is_ood = split.startswith("ood")
        for i in range(cfg.counts()[split]):
            rng = _rng(cfg, split, i)
            motif_kind = int(rng.integers(0, num_classes))
            if cfg.task == "motif-size":
                if is_ood:
                    size = int(rng.integers(lo, hi + 1))
                    env = 3 if split == "ood_val" else 4
                else:
                    env = int(rng.integers(0, len(SIZE_ENV_BANDS)))
                    blo, bhi = SIZE_ENV_BANDS[env]
                    size = int(rng.integers(blo, bhi + 1))
                base_kind = train_bases[int(rng.integers(0, len(train_bases)))]
            else:
                size = int(rng.integers(lo, hi + 1))
                kinds = ood_bases if is_ood else train_bases
                base_kind = kinds[int(rng.integers(0, len(kinds)))]
                if is_ood:
                    env = len(train_bases) + (0 if split == "ood_val" else 1)
                else:
                    env = train_bases.index(base_kind)
            base = base_graph(base_kind, size - MOTIF_SIZE, rng)
            g, meta = attach_motif(base, motif_graph(cfg.motif_kinds[motif_kind]), rng)
            meta.update(motif_kind=motif_kind, base_kind=base_kind)
            samples[split].append(
                LabeledSample(
                    label=_one_hot(motif_kind, num_classes),
                    env=env,
                    graph=g,
                    meta=meta,
                )
            )
    all_envs = sorted({s.env for split in SPLITS for s in samples[split]})
    return DatasetBundle(
        task="graph",
        num_classes=num_classes,
        p=1,
        q=0,
        domain=np.array([[0.0, 2.0]]),
        samples=samples,
        envs=all_envs,
        shift_domain="size" if cfg.task == "motif-size" else "base",
    )


def _palette_colors(cfg: GenConfig):
    n_train = cfg.num_color_envs
    if len(cfg.color_palette) < n_train + 2:
        raise ConfigError(
            f"palette has {len(cfg.color_palette)} colors; need "
            f"{n_train} training environments + 2 held-out colors"
        )
    colors = [np.asarray(c, dtype=np.float64) for _, c in cfg.color_palette]
    return colors[:n_train], colors[n_train], colors[n_train + 1]


def _jitter(color: np.ndarray, n: int, noise: float, rng) -> np.ndarray:
    rows = np.tile(color, (n, 1))
    if noise > 0:
        rows = np.clip(rows + rng.normal(0.0, noise, rows.shape), 0.0, 1.0)
    return rows


def _colorize(g: Graph, color: np.ndarray, noise: float, rng) -> Graph:
    x = np.concatenate(
        [g.node_features, _jitter(color, g.num_nodes, noise, rng)], axis=1
    )
    return Graph(num_nodes=g.num_nodes, edges=g.edges, node_features=x)


COLOR_DOMAIN = np.array([[0.0, 2.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]])


def gen_color_dataset(cfg: GenConfig) -> DatasetBundle:
    """Motif-labeled graphs whose node colors shift across environments."""
    if cfg.task != "color-graph":
        raise ConfigError(f"task {cfg.task!r} is not color-graph")
    train_colors, ood_val_color, ood_test_color = _palette_colors(cfg)
    num_classes = len(cfg.motif_kinds)
    ranges = cfg.ranges()
    samples = {s: [] for s in SPLITS}
    for split in SPLITS:
        lo, hi = ranges[split]
        for i in range(cfg.counts()[split]):
            rng = _rng(cfg, split, i)
            motif_kind = int(rng.integers(0, num_classes))
            size = int(rng.integers(lo, hi + 1))
            base_kind = cfg.base_kinds[int(rng.integers(0, len(cfg.base_kinds)))]
            base = base_graph(base_kind, size - MOTIF_SIZE, rng)
            g, meta = attach_motif(base, motif_graph(cfg.motif_kinds[motif_kind]), rng)
            if split == "ood_val":
                env, color = len(train_colors), ood_val_color
            elif split == "ood_test":
                env, color = len(train_colors) + 1, ood_test_color
            else:
                env = int(rng.integers(0, len(train_colors)))
                color = train_colors[env]
            g = _colorize(g, color, cfg.noise, rng)
            meta.update(motif_kind=motif_kind, base_kind=base_kind)
            samples[split].append(
                LabeledSample(
                    label=_one_hot(motif_kind, num_classes),
                    env=env,
                    graph=g,
                    meta=meta,
                )
            )
    all_envs = sorted({s.env for split in SPLITS for s in samples[split]})
    return DatasetBundle(
        task="graph",
        num_classes=num_classes,
        p=4,
        q=0,
        domain=COLOR_DOMAIN.copy(),
        samples=samples,
        envs=all_envs,
        shift_domain="color",
    )


CBAS_ROLES = ("base", "top", "middle", "bottom")
CBAS_SPLIT_FRACTIONS = {
    "train": 0.5,
    "id_val": 0.1,
    "id_test": 0.1,
    "ood_val": 0.1,
    "ood_test": 0.2,
}


def gen_cbas_dataset(cfg: GenConfig) -> DatasetBundle:
    """One shared BA graph with attached houses; node roles under color shift."""
    if cfg.task != "cbas-node":
        raise ConfigError(f"task {cfg.task!r} is not cbas-node")
    train_colors, ood_val_color, ood_test_color = _palette_colors(cfg)
    rng = np.random.default_rng([cfg.seed, 97])

    base = base_graph("ba", cfg.cbas_base_nodes, rng)
    components = [base]
    bridges = []
    roles = ["base"] * cfg.cbas_base_nodes
    house = motif_graph("house")
    offset = cfg.cbas_base_nodes
    house_nodes = []
    for _ in range(cfg.cbas_num_houses):
        u = int(rng.integers(0, cfg.cbas_base_nodes))
        v = offset + int(rng.integers(0, MOTIF_SIZE))
        bridges.append(Bridge(u=u, v=v, comp_u=0, comp_v=len(components)))
        components.append(house)
        house_nodes.append(list(range(offset, offset + MOTIF_SIZE)))
        roles.extend(HOUSE_ROLES[i] for i in range(MOTIF_SIZE))
        offset += MOTIF_SIZE
    g = splice(components, BridgeSet(tuple(bridges)))
    n = g.num_nodes

    # node -> split assignment, then color by environment
    order = rng.permutation(n)
    split_of = {}
    start = 0
    for split in SPLITS:
        count = int(round(CBAS_SPLIT_FRACTIONS[split] * n))
        if split == "ood_test":  # absorb rounding remainder
            count = n - start
        for node in order[start : start + count]:
            split_of[int(node)] = split
        start += count

    colors = np.zeros((n, 3))
    envs_of = np.zeros(n, dtype=np.int64)
    for node in range(n):
        split = split_of[node]
        node_rng = np.random.default_rng([cfg.seed, 131, node])
        if split == "ood_val":
            env, color = len(train_colors), ood_val_color
        elif split == "ood_test":
            env, color = len(train_colors) + 1, ood_test_color
        else:
            env = int(node_rng.integers(0, len(train_colors)))
            color = train_colors[env]
        envs_of[node] = env
        colors[node] = _jitter(color, 1, cfg.noise, node_rng)[0]

    x = np.concatenate([g.node_features, colors], axis=1)
    shared = Graph(num_nodes=n, edges=g.edges, node_features=x)

    samples = {s: [] for s in SPLITS}
    for node in range(n):
        role = CBAS_ROLES.index(roles[node])
        samples[split_of[node]].append(
            LabeledSample(
                label=_one_hot(role, len(CBAS_ROLES)),
                env=int(envs_of[node]),
                node_id=node,
                meta={"role": roles[node]},
            )
        )
    all_envs = sorted({int(e) for e in envs_of})
    return DatasetBundle(
        task="node",
        num_classes=len(CBAS_ROLES),
        p=4,
        q=0,
        domain=COLOR_DOMAIN.copy(),
        samples=samples,
        envs=all_envs,
        shared_graph=shared,
        shift_domain="color",
    )


GENERATORS = {
    "motif-size": gen_motif_dataset,
    "motif-base": gen_motif_dataset,
    "color-graph": gen_color_dataset,
    "cbas-node": gen_cbas_dataset,
}


def generate(cfg: GenConfig) -> DatasetBundle:
    if cfg.task not in GENERATORS:
        raise ConfigError(f"unknown task {cfg.task!r}")
    return GENERATORS[cfg.task](cfg)
