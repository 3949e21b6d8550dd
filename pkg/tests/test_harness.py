import numpy as np
import pytest

from xtrap.dataset import read_dataset, write_dataset
from xtrap.errors import EvalError
from xtrap.harness import RunConfig, backbone_config, train, verify
from xtrap.metrics import CURVE_COLUMNS, MetricReport, emit_curves, evaluate, read_curves
from xtrap.nn import GraphBatch, ParamStore, init_gnn_params
from xtrap.synth import GenConfig, generate

SMALL = {"train": 24, "id_val": 9, "id_test": 9, "ood_val": 9, "ood_test": 9}


@pytest.fixture(scope="module")
def tiny_bundle():
    return generate(GenConfig(task="motif-base", seed=13, samples_per_split=SMALL))


def test_evaluate_perfect_and_uniform(tiny_bundle):
    cfg = RunConfig(method="erm", epochs=1, seed=0, hidden_dim=8)
    model_cfg = backbone_config(tiny_bundle, cfg)
    ps = ParamStore()
    init_gnn_params(ps, model_cfg, tiny_bundle.p, np.random.default_rng(0))
    acc = evaluate(ps, model_cfg, tiny_bundle, "id_val")
    assert 0.0 <= acc <= 1.0

    # a random 3-class predictor sits near 1/3 over many draws
    rng = np.random.default_rng(0)
    hits = []
    for trial in range(300):
        truth = int(rng.integers(0, 3))
        pred = int(rng.integers(0, 3))
        hits.append(pred == truth)
    assert abs(np.mean(hits) - 1 / 3) < 0.08


def test_evaluate_empty_split_raises(tiny_bundle):
    cfg = RunConfig(method="erm", epochs=1, seed=0, hidden_dim=8)
    model_cfg = backbone_config(tiny_bundle, cfg)
    ps = ParamStore()
    init_gnn_params(ps, model_cfg, tiny_bundle.p, np.random.default_rng(0))
    empty = tiny_bundle.with_train(tiny_bundle.train)
    empty.samples["ood_test"] = []
    with pytest.raises(EvalError):
        evaluate(ps, model_cfg, empty, "ood_test")


def test_metric_report_selection_invariant():
    rep = MetricReport()
    #            epoch loss idv  idt  oodv oodt
    rep.add_row(0, 1.0, 0.5, 0.6, 0.40, 0.30)
    rep.add_row(1, 0.9, 0.9, 0.7, 0.55, 0.45)
    rep.add_row(2, 0.8, 0.7, 0.9, 0.50, 0.99)
    assert rep.selected_epoch == 1  # argmax ood_val, not final epoch
    assert rep.ood_ood == 0.45
    assert rep.id_id == 0.7  # id_test at argmax id_val


def test_emit_curves_roundtrip_and_header(tmp_path):
    rep = MetricReport()
    rep.add_row(0, 1.25, 0.5, 0.5, 0.25, 0.125)
    rep.add_row(1, 0.75, 0.625, 0.5, 0.375, 0.25)
    path = emit_curves(rep, tmp_path / "curves.csv")
    text = path.read_text().splitlines()
    assert text[0] == "epoch,train_loss,id_val_acc,id_test_acc,ood_val_acc,ood_test_acc"
    assert read_curves(path) == rep.rows
    assert tuple(rep.rows[0]) == CURVE_COLUMNS


def test_gamma_zero_equals_plain_gsplice(tiny_bundle, mb_causal, mb_env, mb_bridge):
    from xtrap.gsplice import SpliceConfig, run_gsplice
    from xtrap.synth import BASE_SHIFT_RHO

    ck = {"causal": mb_causal, "env": mb_env, "bridge": mb_bridge}
    cfg = SpliceConfig(options=(3,), f=2, pct=0.25, bridge_mode="vae",
                       shift_domain="base")
    # NOTE: checkpoints come from the full-size bundle; reuse on the tiny
    # bundle only exercises mechanics
    aug = run_gsplice(tiny_bundle, cfg, ck, seed=0)
    plain = RunConfig(method="gsplice", epochs=4, seed=3, hidden_dim=8)
    reg0 = RunConfig(method="gsplice-r", epochs=4, seed=3, hidden_dim=8, gamma=0.0)
    _, rep_a, _ = train(tiny_bundle, plain, {"augmented": aug})
    _, rep_b, _ = train(tiny_bundle, reg0, {"augmented": aug})
    assert [r["train_loss"] for r in rep_a.rows] == [r["train_loss"] for r in rep_b.rows]


def test_two_runs_same_seed_identical(tiny_bundle):
    cfg = RunConfig(method="erm", epochs=3, seed=11, hidden_dim=8)
    _, rep1, _ = train(tiny_bundle, cfg)
    _, rep2, _ = train(tiny_bundle, cfg)
    assert rep1.to_dict() == rep2.to_dict()


def test_verify_fast_suites_pass():
    for suite in ("splice-algebra", "thm51"):
        result = verify(suite, seed=0)
        assert result["passed"], (suite, result)


def test_verify_modulo_suite():
    result = verify("modulo", seed=1)
    assert result["passed"]
    assert result["violations"] == 0


def test_node_level_training_runs(cbas_bundle):
    cfg = RunConfig(method="erm", epochs=3, seed=0, hidden_dim=16)
    params, rep, _ = train(cbas_bundle, cfg)
    assert len(rep.rows) == 3
    model_cfg = backbone_config(cbas_bundle, cfg)
    assert model_cfg.kind == "GCN" and model_cfg.pooling == "none"
