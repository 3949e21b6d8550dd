import json

import numpy as np
import pytest

from xtrap.dataset import read_dataset, write_dataset
from xtrap.errors import ParseError, SchemaError
from xtrap.synth import GenConfig, generate

SMALL = {"train": 12, "id_val": 4, "id_test": 4, "ood_val": 4, "ood_test": 4}


@pytest.fixture(scope="module")
def bundle():
    return generate(GenConfig(task="motif-base", seed=3, samples_per_split=SMALL))


def test_roundtrip_identity(bundle, tmp_path):
    path = write_dataset(bundle, tmp_path / "data.jsonl")
    back = read_dataset(path)
    assert back.task == bundle.task
    assert back.num_classes == bundle.num_classes
    assert back.envs == bundle.envs
    assert np.array_equal(back.domain, bundle.domain)
    for split in ("train", "ood_test"):
        assert len(back.split(split)) == len(bundle.split(split))
        for a, b in zip(back.split(split), bundle.split(split)):
            assert np.array_equal(a.label, b.label)
            assert a.env == b.env
            assert a.graph.edges == b.graph.edges
            assert np.array_equal(a.graph.node_features, b.graph.node_features)
    # byte-identical on rewrite
    path2 = write_dataset(back, tmp_path / "again.jsonl")
    assert path.read_bytes() == path2.read_bytes()


def test_node_level_roundtrip(tmp_path):
    nb = generate(GenConfig(task="cbas-node", seed=1, cbas_base_nodes=30,
                            cbas_num_houses=6))
    path = write_dataset(nb, tmp_path / "nodes.jsonl")
    back = read_dataset(path)
    assert back.task == "node"
    assert back.shared_graph.num_nodes == nb.shared_graph.num_nodes
    assert np.array_equal(back.shared_graph.node_features,
                          nb.shared_graph.node_features)
    assert [s.node_id for s in back.train] == [s.node_id for s in nb.train]


def _write_lines(tmp_path, lines):
    p = tmp_path / "bad.jsonl"
    p.write_text("\n".join(lines) + "\n")
    return p


HEADER = json.dumps({"p": 1, "q": 0, "num_classes": 2, "task": "graph",
                     "domain": [[0.0, 2.0]], "envs": [0]})


def test_label_sum_schema_error(tmp_path):
    rec = {"n": 2, "edges": [[0, 1]], "x": [[1.0], [1.0]], "y": [0.25, 0.25],
           "env": 0, "split": "train"}
    p = _write_lines(tmp_path, [HEADER, json.dumps(rec)])
    with pytest.raises(SchemaError):
        read_dataset(p)


def test_self_loop_schema_error(tmp_path):
    rec = {"n": 8, "edges": [[7, 7]], "x": [[1.0]] * 8, "y": [1.0, 0.0],
           "env": 0, "split": "train"}
    p = _write_lines(tmp_path, [HEADER, json.dumps(rec)])
    with pytest.raises(SchemaError):
        read_dataset(p)


def test_missing_field_names_the_field(tmp_path):
    rec = {"n": 2, "edges": [[0, 1]], "x": [[1.0], [1.0]], "env": 0,
           "split": "train"}
    p = _write_lines(tmp_path, [HEADER, json.dumps(rec)])
    with pytest.raises(SchemaError) as exc:
        read_dataset(p)
    assert "`y`" in str(exc.value)


def test_parse_error_carries_line_number(tmp_path):
    p = _write_lines(tmp_path, [HEADER, "{not json"])
    with pytest.raises(ParseError) as exc:
        read_dataset(p)
    assert exc.value.line == 2


def test_unknown_split_rejected(tmp_path):
    rec = {"n": 2, "edges": [], "x": [[1.0], [1.0]], "y": [1.0, 0.0],
           "env": 0, "split": "validation"}
    p = _write_lines(tmp_path, [HEADER, json.dumps(rec)])
    with pytest.raises(SchemaError):
        read_dataset(p)
