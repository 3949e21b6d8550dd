"""Session fixtures: benchmark bundles and pretrained checkpoints shared
across test modules (pretraining is the expensive part)."""
import numpy as np
import pytest

from xtrap.bridge import pretrain_bridge_generator
from xtrap.extract import pretrain_extractor
from xtrap.synth import BASE_SHIFT_RHO, GenConfig, generate


@pytest.fixture(scope="session")
def motif_base_bundle():
    return generate(GenConfig(task="motif-base", seed=7))


@pytest.fixture(scope="session")
def motif_size_bundle():
    return generate(GenConfig(task="motif-size", seed=7))


@pytest.fixture(scope="session")
def color_bundle():
    return generate(GenConfig(task="color-graph", seed=7))


@pytest.fixture(scope="session")
def cbas_bundle():
    return generate(GenConfig(task="cbas-node", seed=7))


@pytest.fixture(scope="session")
def mb_causal(motif_base_bundle):
    params, curve = pretrain_extractor(
        motif_base_bundle, "causal", epochs=60, rng=np.random.default_rng(5),
        rho=BASE_SHIFT_RHO["causal"])
    params.loss_curve = curve
    return params


@pytest.fixture(scope="session")
def mb_env(motif_base_bundle):
    params, curve = pretrain_extractor(
        motif_base_bundle, "environmental", epochs=60, rng=np.random.default_rng(6),
        rho=BASE_SHIFT_RHO["environmental"])
    params.loss_curve = curve
    return params


@pytest.fixture(scope="session")
def mb_bridge(motif_base_bundle):
    params, curve = pretrain_bridge_generator(
        motif_base_bundle, alpha=1.0, beta=0.5, epochs=20,
        rng=np.random.default_rng(6))
    params.loss_curve = curve
    return params


@pytest.fixture(scope="session")
def ms_causal(motif_size_bundle):
    params, curve = pretrain_extractor(
        motif_size_bundle, "causal", epochs=60, rng=np.random.default_rng(5))
    params.loss_curve = curve
    return params


@pytest.fixture(scope="session")
def ms_bridge(motif_size_bundle):
    params, curve = pretrain_bridge_generator(
        motif_size_bundle, alpha=1.0, beta=0.5, epochs=20,
        rng=np.random.default_rng(6))
    params.loss_curve = curve
    return params


@pytest.fixture(scope="session")
def color_ckpts(color_bundle):
    causal, _ = pretrain_extractor(
        color_bundle, "causal", epochs=40, rng=np.random.default_rng(5))
    bridge, _ = pretrain_bridge_generator(
        color_bundle, alpha=1.0, beta=0.5, epochs=15, rng=np.random.default_rng(6))
    return {"causal": causal, "bridge": bridge}
