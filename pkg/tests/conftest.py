"""Shared fixtures: the reference dataset and a trained zoo.

Both are expensive enough to build once per session; every test that
needs real trained models shares these instances.  Tests must not
mutate them (model parameters are frozen arrays, datasets are frozen
dataclasses, and the zoo dict is copied per use where order matters).
"""

import numpy as np
import pytest

from advkit.datasets import Dataset, collection_id, synthetic_dataset
from advkit.models import (
    DEFAULT_DATASET_SEED,
    Hyper,
    ModelSpec,
    build_architecture,
    dense,
    flatten,
    train,
    train_zoo,
)


@pytest.fixture(scope="session")
def data():
    """The reference (train, test) pair the zoo is tuned against."""
    return synthetic_dataset(DEFAULT_DATASET_SEED)


@pytest.fixture(scope="session")
def zoo(data):
    train_ds, _ = data
    return train_zoo(train_ds)


@pytest.fixture(scope="session")
def small_data():
    """A smaller, faster dataset for unit tests that train their own models."""
    return synthetic_dataset(5, n_train=400, n_test=120)


@pytest.fixture(scope="session")
def small_model(small_data):
    """A quick dense classifier for attack unit tests."""
    train_ds, _ = small_data
    spec = build_architecture("mlp_s", train_ds.image_shape, train_ds.num_classes)
    return train(spec, train_ds, Hyper(lr=0.1, epochs=3, batch_size=32, seed=7))


@pytest.fixture(scope="session")
def linear_2d():
    """A trained 2-feature binary classifier with an analytic decision
    boundary, plus its test points.  Used to check cw_l2 against the
    exact distance-to-hyperplane."""
    rng = np.random.default_rng(7)
    protos = np.array([[0.32, 0.38], [0.68, 0.62]])

    def make(n_per):
        pts = np.vstack(
            [
                np.clip(protos[k] + 0.08 * rng.standard_normal((n_per, 2)), 0.0, 1.0)
                for k in (0, 1)
            ]
        )
        labels = np.repeat(np.arange(2), n_per)
        return pts.reshape(-1, 1, 1, 2), labels.astype(np.int64)

    tr_img, tr_lab = make(200)
    te_img, te_lab = make(60)
    cid = collection_id(
        2, (1, 1, 2), {"train": (tr_img, tr_lab), "test": (te_img, te_lab)}
    )
    train_ds = Dataset(tr_img, tr_lab, "train", 2, cid)
    test_ds = Dataset(te_img, te_lab, "test", 2, cid)
    spec = ModelSpec((1, 1, 2), 2, (flatten(), dense(2, 2)))
    model = train(spec, train_ds, Hyper(lr=0.5, epochs=30, batch_size=32, seed=11))
    return model, test_ds
