import numpy as np
import pytest

from xtrap.errors import NoValidPairs
from xtrap.extract import (
    extract_causal,
    extract_env,
    extract_mask,
    extraction_iou,
    new_extractor,
    node_keep_probs,
    predict_from_extraction,
    pretrain_extractor,
    sample_subgraph,
    similarity_weight,
    topk_mask,
    weighted_similarity,
)
from xtrap.graph import Graph
from xtrap.synth import GenConfig, generate

SMALL = {"train": 24, "id_val": 6, "id_test": 6, "ood_val": 6, "ood_test": 6}


def small_bundle():
    return generate(GenConfig(task="motif-base", seed=11, samples_per_split=SMALL))


def test_weighted_similarity_self_diagonal_is_one():
    b = small_bundle()
    g = b.train[0].graph
    params = new_extractor(b.p, b.num_classes, 0.35, np.random.default_rng(0))
    assert similarity_weight(params) == pytest.approx(1.0)
    sim = weighted_similarity(g, g, params)
    assert np.allclose(np.diag(sim), 1.0, atol=1e-9)
    assert sim.shape == (g.num_nodes, g.num_nodes)


def test_weighted_similarity_scales_with_w():
    b = small_bundle()
    g1, g2 = b.train[0].graph, b.train[1].graph
    params = new_extractor(b.p, b.num_classes, 0.35, np.random.default_rng(0))
    sim1 = weighted_similarity(g1, g2, params)
    params.values["w_log"][...] = np.log(2.5)
    sim2 = weighted_similarity(g1, g2, params)
    assert np.allclose(sim2, 2.5 * sim1, atol=1e-9)
    recomputed = similarity_weight(params) * (sim1 / 1.0)
    assert np.allclose(sim2, recomputed, atol=1e-9)


def test_node_keep_probs_hand_matrix():
    sim = np.array([[2.0, -1.0], [0.0, 3.0]])
    probs = node_keep_probs(sim, side=1)
    expected = 1.0 / (1.0 + np.exp(-np.array([2.0, 3.0])))
    assert np.allclose(probs, expected, atol=1e-12)
    probs2 = node_keep_probs(sim, side=2)
    assert np.allclose(probs2, 1.0 / (1.0 + np.exp(-np.array([2.0, 3.0]))), atol=1e-12)


def test_sample_subgraph_trivial_cases():
    g = Graph(6, ((0, 1), (1, 2), (2, 3), (3, 4), (4, 5)), np.ones((6, 1)))
    rng = np.random.default_rng(0)
    whole = sample_subgraph(g, np.ones(6), "bernoulli", rng)
    assert whole.num_nodes == 6
    whole2 = sample_subgraph(g, np.linspace(0.1, 0.9, 6), "topk", rho=1.0)
    assert whole2.num_nodes == 6
    # all-zero probs in bernoulli mode falls back to topk, never empty
    tiny = sample_subgraph(g, np.zeros(6), "bernoulli", rng, rho=0.3)
    assert tiny.num_nodes >= 1


def test_topk_mask_deterministic_ties():
    probs = np.array([0.5, 0.5, 0.5, 0.5])
    mask = topk_mask(probs, 0.5)
    assert mask.tolist() == [True, True, False, False]


def test_no_valid_pairs_single_environment():
    b = small_bundle()
    single_env = b.with_train(
        [type(s)(label=s.label, env=0, graph=s.graph, meta=s.meta) for s in b.train],
        extra_envs=[0],
    )
    with pytest.raises(NoValidPairs):
        pretrain_extractor(single_env, "causal", epochs=1,
                           rng=np.random.default_rng(0))


def test_extraction_deterministic_and_sized(mb_causal, motif_base_bundle):
    g = motif_base_bundle.split("id_val")[0].graph
    a = extract_causal(g, mb_causal)
    b2 = extract_causal(g, mb_causal)
    assert a.edges == b2.edges
    assert np.array_equal(a.node_features, b2.node_features)
    rho = float(mb_causal["cfg.rho"])
    assert a.num_nodes == int(np.ceil(rho * g.num_nodes))


def test_pretraining_loss_decreases(mb_causal, mb_env):
    assert mb_causal.loss_curve[-1] < mb_causal.loss_curve[0]
    assert mb_env.loss_curve[-1] < mb_env.loss_curve[0]


def test_causal_iou_against_meta(mb_causal, motif_base_bundle):
    iou = extraction_iou(motif_base_bundle, mb_causal, "causal", "id_val")
    assert iou >= 0.8, iou


def test_env_iou_against_meta(mb_env, motif_base_bundle):
    iou = extraction_iou(motif_base_bundle, mb_env, "environmental", "id_val")
    assert iou >= 0.8, iou


def test_label_predictable_from_extraction(mb_causal, motif_base_bundle):
    hits = 0
    samples = motif_base_bundle.split("id_val")
    for s in samples:
        pred = predict_from_extraction(s.graph, mb_causal)
        hits += int(pred == s.hard_label)
    assert hits / len(samples) >= 0.9


def test_extract_env_keeps_base_fraction(mb_env, motif_base_bundle):
    g = motif_base_bundle.split("id_val")[0].graph
    sub = extract_env(g, mb_env)
    rho = float(mb_env["cfg.rho"])
    assert sub.num_nodes == int(np.ceil(rho * g.num_nodes))


def test_extracted_nodes_subset_and_induced(mb_causal, motif_base_bundle):
    g = motif_base_bundle.split("id_val")[1].graph
    mask = extract_mask(g, mb_causal)
    sub = extract_causal(g, mb_causal)
    kept = np.flatnonzero(mask)
    assert sub.num_nodes == len(kept)
    # induced property: every edge of g between kept nodes appears in sub
    pos = {int(old): i for i, old in enumerate(kept)}
    expected = sorted(
        tuple(sorted((pos[u], pos[v]))) for u, v in g.edges
        if mask[u] and mask[v]
    )
    assert sorted(map(tuple, sub.edges)) == expected
