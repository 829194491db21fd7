"""Shared fixtures.

The expensive fixtures (a fully trained model on the default benchmark and
a cv/free training pair) are session-scoped so the whole suite pays for
them once.
"""
import numpy as np
import pytest

from trendadapt import GeneratorConfig, ModelConfig, TrainConfig, generate, train_test_split
from trendadapt.synth import build_world
from trendadapt.training import pretrain_feature_extractor, sequence_trajectory, train

# settings used for the "reference" trained model; epochs and sigma_aug are
# above the dataclass defaults because the synthetic benchmark needs the
# longer schedule to separate all twenty environments
REF_EPOCHS = 4000
REF_SIGMA_AUG = 0.2
PAIR_EPOCHS = 800


@pytest.fixture(scope="session")
def world0():
    """Default benchmark world at seed 0: dataset, split, and ground truth."""
    gcfg = GeneratorConfig()
    dataset = generate(gcfg, seed=0)
    train_set, test_set = train_test_split(dataset, dataset.meta["held_out_ids"])
    outcome, train_specs, test_specs = build_world(gcfg, 0)
    return {"gcfg": gcfg, "dataset": dataset, "train": train_set, "test": test_set,
            "outcome": outcome, "train_specs": train_specs, "test_specs": test_specs}


@pytest.fixture(scope="session")
def trained_model(world0):
    """Reference cv-mode model trained on the default benchmark."""
    mcfg = ModelConfig()
    train_set = world0["train"]
    f_store = pretrain_feature_extractor(train_set.sequences, mcfg, 300, 1e-2, 0)
    store, report = train(train_set, mcfg,
                          TrainConfig(epochs=REF_EPOCHS, seed=0, sigma_aug=REF_SIGMA_AUG),
                          f_store=f_store)
    positions = {}
    for seq in train_set.sequences:
        positions[seq.id] = sequence_trajectory(store, seq, "cv")
    centroids = {sid: p.mean(axis=0) for sid, (p, _) in positions.items()}
    init = np.concatenate([p for p, _ in positions.values()]).mean(axis=0)
    return {"store": store, "mcfg": mcfg, "report": report, "f_store": f_store,
            "positions": positions, "centroids": centroids, "init": init}


@pytest.fixture(scope="session")
def mode_pair(world0):
    """cv and free models trained with identical data, seed, and schedule."""
    mcfg = ModelConfig()
    train_set = world0["train"]
    f_store = pretrain_feature_extractor(train_set.sequences, mcfg, 300, 1e-2, 0)
    store_cv, _ = train(train_set, mcfg,
                        TrainConfig(epochs=PAIR_EPOCHS, seed=0, sigma_aug=REF_SIGMA_AUG),
                        f_store=f_store)
    store_free, _ = train(train_set, mcfg,
                          TrainConfig(epochs=PAIR_EPOCHS, seed=0, sigma_aug=REF_SIGMA_AUG,
                                      mode="free"),
                          f_store=f_store)
    return {"mcfg": mcfg, "cv": store_cv, "free": store_free}


@pytest.fixture(scope="session")
def tiny_world():
    """Small, fast dataset for mechanics-level tests."""
    gcfg = GeneratorConfig(n_families=2, sequences_per_family=3, held_out_per_family=1,
                           sequence_length=12)
    dataset = generate(gcfg, seed=3)
    train_set, test_set = train_test_split(dataset, dataset.meta["held_out_ids"])
    return {"gcfg": gcfg, "dataset": dataset, "train": train_set, "test": test_set}


@pytest.fixture(scope="session")
def tiny_trained(tiny_world):
    """Quickly trained identity-feature model on the tiny dataset."""
    mcfg = ModelConfig(identity_features=True, g_hidden=(8,))
    store, report = train(tiny_world["train"], mcfg,
                          TrainConfig(epochs=150, seed=0, sigma_aug=0.0))
    return {"store": store, "mcfg": mcfg, "report": report}
