import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xtrap.dataset import DatasetBundle
from xtrap.errors import (
    ConfigError,
    DegenerateGroups,
    LabelMismatch,
    SameEnvironment,
)
from xtrap.featx import (
    FeatXParams,
    featx_augment,
    featx_features,
    generalized_modulo,
    mask_from_scores,
    sample_lambda,
    variance_scores,
)
from xtrap.graph import Graph, LabeledSample


def four_sample_bundle(feature_values):
    """The hand-computable setup: 4 one-node graphs, labels {0,0,1,1},
    environments {0,1,0,1}, a single feature."""
    samples = {"train": [], "id_val": [], "id_test": [], "ood_val": [],
               "ood_test": []}
    labels = [0, 0, 1, 1]
    envs = [0, 1, 0, 1]
    for val, lab, env in zip(feature_values, labels, envs):
        g = Graph(1, (), np.array([[float(val)]]))
        y = np.zeros(2)
        y[lab] = 1.0
        samples["train"].append(LabeledSample(label=y, env=env, graph=g))
    return DatasetBundle(task="graph", num_classes=2, p=1, q=0,
                         domain=np.array([[0.0, 1.0]]), samples=samples,
                         envs=[0, 1])


def test_variance_scores_env_indicator_feature():
    # feature equals the environment indicator: within-label var 0.25,
    # within-env var 0 -> S_V = 0.25 * k1
    b = four_sample_bundle([0, 1, 0, 1])
    assert variance_scores(b, 2.0, 7.0)[0] == pytest.approx(0.5)
    assert variance_scores(b, 1.0, 1.0)[0] == pytest.approx(0.25)


def test_variance_scores_label_indicator_feature():
    b = four_sample_bundle([0, 0, 1, 1])
    assert variance_scores(b, 1.0, 1.0)[0] == pytest.approx(-0.25)
    assert variance_scores(b, 3.0, 4.0)[0] == pytest.approx(-1.0)


def test_variance_scores_constant_feature():
    b = four_sample_bundle([0.7, 0.7, 0.7, 0.7])
    assert variance_scores(b, 5.0, 9.0)[0] == 0.0


def test_variance_scores_degenerate_groups():
    b = four_sample_bundle([0, 1, 0, 1])
    b.samples["train"] = b.samples["train"][:2]  # one label only
    with pytest.raises(DegenerateGroups):
        variance_scores(b, 1.0, 1.0)


def test_mask_from_scores():
    s = np.array([0.25, -0.25])
    assert mask_from_scores(s, T=-1.0).tolist() == [1.0, 1.0]
    assert mask_from_scores(s, T=1.0).tolist() == [0.0, 0.0]
    assert mask_from_scores(s, T=0.0).tolist() == [1.0, 0.0]
    soft = mask_from_scores(s, T=0.0, tau=0.1)
    assert 0.9 < soft[0] < 1.0 and 0.0 < soft[1] < 0.1


def test_generalized_modulo_examples():
    assert generalized_modulo(np.array([1.3]), np.array([[0.0, 1.0]]))[0] == \
        pytest.approx(0.3, abs=1e-9)
    assert generalized_modulo(np.array([0.5]), np.array([[0.0, 1.0]]))[0] == 0.5
    assert generalized_modulo(np.array([-1.5]), np.array([[-1.0, 1.0]]))[0] == \
        pytest.approx(0.5, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-100, 100), st.floats(1e-3, 50))
def test_generalized_modulo_closure_property(x, lo, width):
    hi = lo + width
    y = generalized_modulo(np.array([x]), np.array([[lo, hi]]))[0]
    assert lo <= y < hi


def test_featx_features_hand_case():
    out = featx_features(np.array([[0.8]]), np.array([0.2]), np.array([1.0]),
                         lam=1.0, lam_prime=1.0, domain=np.array([[0.0, 1.0]]))
    assert out[0, 0] == pytest.approx(0.4, abs=1e-9)


def test_featx_identity_cases():
    x1 = np.array([[0.8, 0.3], [0.1, 0.9]])
    dom = np.array([[0.0, 1.0], [0.0, 1.0]])
    out = featx_features(x1, np.array([0.5, 0.5]), np.ones(2), 0.0, 0.0, dom)
    assert np.allclose(out, x1)
    out2 = featx_features(x1, np.array([0.5, 0.5]), np.zeros(2), 3.7, 2.2, dom)
    assert np.array_equal(out2, x1)  # bitwise for masked-out columns


def test_featx_masked_column_bitwise_unchanged():
    rng = np.random.default_rng(0)
    x1 = rng.random((6, 3))
    dom = np.tile([[0.0, 1.0]], (3, 1))
    out = featx_features(x1, rng.random(3), np.array([1.0, 0.0, 1.0]),
                         2.5, 2.5, dom)
    assert np.array_equal(out[:, 1], x1[:, 1])
    assert np.all((out >= 0.0) & (out < 1.0))


def test_featx_augment_contract():
    g1 = Graph(3, ((0, 1), (1, 2)), np.array([[0.8], [0.2], [0.5]]))
    g2 = Graph(2, ((0, 1),), np.array([[0.4], [0.6]]))
    s1 = LabeledSample(label=np.array([1.0, 0.0]), env=0, graph=g1)
    s2 = LabeledSample(label=np.array([1.0, 0.0]), env=1, graph=g2)
    out = featx_augment(s1, s2, mask=np.array([1.0]), lam=0.5, lam_prime=0.5,
                        domain=np.array([[0.0, 1.0]]), env=9,
                        rng=np.random.default_rng(0))
    assert out.env == 9
    assert out.graph.edges == g1.edges  # structure preserved bitwise
    assert np.array_equal(out.label, s1.label)
    assert np.all((out.graph.node_features >= 0) & (out.graph.node_features < 1))


def test_featx_augment_validations():
    g = Graph(1, (), np.array([[0.5]]))
    a = LabeledSample(label=np.array([1.0, 0.0]), env=0, graph=g)
    b = LabeledSample(label=np.array([0.0, 1.0]), env=1, graph=g)
    c = LabeledSample(label=np.array([1.0, 0.0]), env=0, graph=g)
    dom = np.array([[0.0, 1.0]])
    with pytest.raises(LabelMismatch):
        featx_augment(a, b, np.ones(1), 1.0, 1.0, dom, 5,
                      rng=np.random.default_rng(0))
    with pytest.raises(SameEnvironment):
        featx_augment(a, c, np.ones(1), 1.0, 1.0, dom, 5,
                      rng=np.random.default_rng(0))


def test_sample_lambda_moments_and_positivity():
    rng = np.random.default_rng(0)
    draws = np.array([sample_lambda(2.0, 1.0, rng) for _ in range(100_000)])
    assert np.all(draws > 0)
    assert abs(draws.mean() - 2.0) / 2.0 < 0.02
    rng2 = np.random.default_rng(42)
    rng3 = np.random.default_rng(42)
    assert sample_lambda(3.0, 0.5, rng2) == sample_lambda(3.0, 0.5, rng3)


def test_featx_params_validation():
    with pytest.raises(ConfigError):
        FeatXParams(domain=np.array([[0.0, 1.0]]), a=-1.0)
    with pytest.raises(ConfigError):
        FeatXParams(domain=np.array([[1.0, 1.0]]))


def test_span_coverage_oracle():
    # 1-dim variant feature supported on two environments (0.1, 0.2);
    # 10^4 augmentations cover >= 95% of 20 bins of [0, 1)
    rng = np.random.default_rng(1)
    dom = np.array([[0.0, 1.0]])
    hits = np.zeros(20, dtype=bool)
    for _ in range(10_000):
        x1, x2 = (0.1, 0.2) if rng.random() < 0.5 else (0.2, 0.1)
        lam = sample_lambda(2.0, 1.0, rng)
        val = featx_features(np.array([[x1]]), np.array([x2]), np.ones(1),
                             lam, lam, dom)[0, 0]
        hits[min(int(val * 20), 19)] = True
    assert hits.mean() >= 0.95
