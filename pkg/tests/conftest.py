import numpy as np
import pytest

from pseudolab.datagen import (
    AugmentSpec,
    class_means,
    make_mixture,
    save_dataset,
    split_labeled,
)
from pseudolab.gating import ENERGY, GateStrategy
from pseudolab.trainer import TrainConfig, test_set_path


@pytest.fixture(scope="session")
def tiny_dataset_path(tmp_path_factory):
    """Small 3-class mixture on disk, with its held-out test companion."""
    root = tmp_path_factory.mktemp("data")
    path = root / "tiny.txt"
    means = class_means(3, 4, 4.0, 0)
    scales = np.ones(3)
    ds = make_mixture(3, 4, means, scales, np.array([30, 20, 10]), 0)
    ds = split_labeled(ds, 0.3, 0)
    save_dataset(ds, path)
    test = make_mixture(3, 4, means, scales, np.array([20, 20, 20]), "0-test")
    save_dataset(test, test_set_path(str(path)))
    return str(path)


@pytest.fixture
def tiny_config(tiny_dataset_path):
    return TrainConfig(
        dataset=tiny_dataset_path,
        total_iters=30,
        eval_every=10,
        strategy=GateStrategy(kind=ENERGY, tau_e=-2.0),
        augment=AugmentSpec(weak_sigma=0.05, strong_sigma=0.2, strong_dropout=0.1),
        labeled_batch=8,
        unlabeled_ratio=3,
        seed=1,
    )
