"""Dataset bundles and their JSON Lines serialization.

File layout: the first line is a header with `p`, `q`, `num_classes`,
`task`, `domain`, the environment registry and, for node-level tasks,
the shared graph. Every following line is one sample. Serialization is
canonical (sorted keys, fixed separators), so identical bundles produce
byte-identical files.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import GraphInvariantError, ParseError, SchemaError
from .graph import Graph, LabeledSample

SPLITS = ("train", "id_val", "id_test", "ood_val", "ood_test")


@dataclass
class DatasetBundle:
    task: str  # "graph" | "node"
    num_classes: int
    p: int  # node-feature width
    q: int  # edge-feature width (0 = none)
    domain: np.ndarray  # [p, 2] per-feature [lo, hi]
    samples: dict  # split -> list[LabeledSample]
    envs: list  # registered environment ids, sorted
    shared_graph: Optional[Graph] = None  # node-level tasks only
    shift_domain: Optional[str] = None  # size | base | color, if declared

    def __post_init__(self):
        self.domain = np.asarray(self.domain, dtype=np.float64).reshape(self.p, 2)
        for split in SPLITS:
            self.samples.setdefault(split, [])
        unknown = set(self.samples) - set(SPLITS)
        if unknown:
            raise SchemaError(f"unknown splits {sorted(unknown)}")
        if self.task not in ("graph", "node"):
            raise SchemaError(f"task must be graph|node, got {self.task!r}")
        if self.task == "node" and self.shared_graph is None:
            raise SchemaError("node-level bundle needs a shared graph")
        self.envs = sorted(set(self.envs))
        registry = set(self.envs)
        for split, samples in self.samples.items():
            for s in samples:
                if s.env not in registry:
                    raise SchemaError(
                        f"sample in {split} has unregistered environment {s.env}"
                    )

    @property
    def train(self):
        return self.samples["train"]

    def split(self, name: str):
        if name not in SPLITS:
            raise SchemaError(f"unknown split {name!r}")
        return self.samples[name]

    def sample_graph(self, s: LabeledSample) -> Graph:
        """The graph a sample lives on (its own, or the shared one)."""
        return s.graph if s.graph is not None else self.shared_graph

    def with_train(self, new_train, extra_envs=()) -> "DatasetBundle":
        """Copy of the bundle with a replaced training split."""
        samples = dict(self.samples)
        samples["train"] = list(new_train)
        return DatasetBundle(
            task=self.task,
            num_classes=self.num_classes,
            p=self.p,
            q=self.q,
            domain=self.domain.copy(),
            samples=samples,
            envs=sorted(set(self.envs) | set(extra_envs)),
            shared_graph=self.shared_graph,
            shift_domain=self.shift_domain,
        )

    def train_environments(self):
        return sorted({s.env for s in self.train})


def _graph_to_fields(g: Graph) -> dict:
    d = {
        "n": g.num_nodes,
        "edges": [[int(u), int(v)] for u, v in g.edges],
        "x": g.node_features.tolist(),
    }
    if g.edge_features is not None:
        d["edge_attr"] = g.edge_features.tolist()
    return d


def _graph_from_fields(d: dict, line: int) -> Graph:
    for key in ("n", "edges", "x"):
        if key not in d:
            raise SchemaError(f"missing field `{key}`", field=key, line=line)
    try:
        return Graph(
            num_nodes=int(d["n"]),
            edges=tuple((int(u), int(v)) for u, v in d["edges"]),
            node_features=np.asarray(d["x"], dtype=np.float64),
            edge_features=(
                np.asarray(d["edge_attr"], dtype=np.float64)
                if d.get("edge_attr") is not None
                else None
            ),
        )
    except GraphInvariantError as exc:
        raise SchemaError(str(exc), line=line) from exc


def _meta_to_json(meta: dict) -> dict:
    out = {}
    for k, v in meta.items():
        if isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, (list, tuple)):
            v = [list(e) if isinstance(e, (list, tuple, np.ndarray)) else e for e in v]
        out[k] = v
    return out


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_dataset(bundle: DatasetBundle, path) -> Path:
    """Write the bundle as JSON Lines. Returns the file path written."""
    path = Path(path)
    if path.is_dir():
        path = path / "data.jsonl"
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "p": bundle.p,
        "q": bundle.q,
        "num_classes": bundle.num_classes,
        "task": bundle.task,
        "domain": bundle.domain.tolist(),
        "envs": list(bundle.envs),
    }
    if bundle.shift_domain is not None:
        header["shift_domain"] = bundle.shift_domain
    if bundle.shared_graph is not None:
        header["shared_graph"] = _graph_to_fields(bundle.shared_graph)
    lines = [_dump(header)]
    for split in SPLITS:
        for s in bundle.samples[split]:
            rec = {
                "y": s.label.tolist(),
                "env": int(s.env),
                "split": split,
            }
            if s.graph is not None:
                rec.update(_graph_to_fields(s.graph))
            else:
                rec["node_id"] = int(s.node_id)
            if s.meta:
                rec["meta"] = _meta_to_json(s.meta)
            lines.append(_dump(rec))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_dataset(path) -> DatasetBundle:
    """Parse a JSON Lines dataset file back into a bundle."""
    path = Path(path)
    if path.is_dir():
        path = path / "data.jsonl"
    if not path.exists():
        raise ParseError(f"no such file: {path}")
    raw_lines = path.read_text().splitlines()
    if not raw_lines:
        raise ParseError("empty dataset file", line=1)

    def parse_json(text, lineno):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), line=lineno) from exc

    header = parse_json(raw_lines[0], 1)
    for key in ("p", "q", "num_classes", "task", "domain"):
        if key not in header:
            raise SchemaError(f"header missing field `{key}`", field=key, line=1)
    shared = None
    if header.get("shared_graph") is not None:
        shared = _graph_from_fields(header["shared_graph"], 1)

    samples = {s: [] for s in SPLITS}
    envs = set(header.get("envs", []))
    for lineno, text in enumerate(raw_lines[1:], start=2):
        if not text.strip():
            continue
        rec = parse_json(text, lineno)
        for key in ("y", "env", "split"):
            if key not in rec:
                raise SchemaError(f"missing field `{key}`", field=key, line=lineno)
        split = rec["split"]
        if split not in SPLITS:
            raise SchemaError(f"unknown split {split!r}", field="split", line=lineno)
        y = np.asarray(rec["y"], dtype=np.float64)
        if y.ndim != 1 or np.any(y < 0) or abs(float(y.sum()) - 1.0) > 1e-9:
            raise SchemaError(
                f"label {y.tolist()} is not a probability vector",
                field="y",
                line=lineno,
            )
        if len(y) != header["num_classes"]:
            raise SchemaError(
                f"label has {len(y)} classes, header says {header['num_classes']}",
                field="y",
                line=lineno,
            )
        meta = rec.get("meta", {}) or {}
        if "node_id" in rec:
            if shared is None:
                raise SchemaError(
                    "node sample without a shared graph", field="node_id", line=lineno
                )
            node_id = int(rec["node_id"])
            if not (0 <= node_id < shared.num_nodes):
                raise SchemaError(
                    f"node_id {node_id} out of range", field="node_id", line=lineno
                )
            sample = LabeledSample(label=y, env=int(rec["env"]), node_id=node_id, meta=meta)
        else:
            g = _graph_from_fields(rec, lineno)
            if g.num_node_features != header["p"]:
                raise SchemaError(
                    f"graph has p={g.num_node_features}, header says {header['p']}",
                    field="x",
                    line=lineno,
                )
            sample = LabeledSample(label=y, env=int(rec["env"]), graph=g, meta=meta)
        envs.add(int(rec["env"]))
        samples[split].append(sample)

    return DatasetBundle(
        task=header["task"],
        num_classes=int(header["num_classes"]),
        p=int(header["p"]),
        q=int(header["q"]),
        domain=np.asarray(header["domain"], dtype=np.float64),
        samples=samples,
        envs=sorted(envs),
        shared_graph=shared,
        shift_domain=header.get("shift_domain"),
    )
