"""Dataset generation, validation, persistence, and IDX import."""

import struct

import numpy as np
import pytest

from advkit.datasets import (
    Dataset,
    collection_id,
    load_datasets,
    load_idx,
    save_datasets,
    synthetic_dataset,
)
from advkit.errors import ContractError, DataError


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

def test_synthetic_shapes_and_counts():
    train_ds, test_ds = synthetic_dataset(0, n_train=50, n_test=20)
    assert train_ds.images.shape == (50, 1, 16, 16)
    assert test_ds.images.shape == (20, 1, 16, 16)
    assert train_ds.labels.shape == (50,)
    assert train_ds.num_classes == 10
    assert train_ds.split == "train" and test_ds.split == "test"


def test_synthetic_pixels_in_domain():
    train_ds, test_ds = synthetic_dataset(3, n_train=100, n_test=40)
    for ds in (train_ds, test_ds):
        assert ds.images.min() >= 0.0
        assert ds.images.max() <= 1.0


def test_synthetic_labels_balanced():
    train_ds, _ = synthetic_dataset(1, n_train=100, n_test=20)
    expected = np.arange(100) % 10
    assert np.array_equal(train_ds.labels, expected)


def test_synthetic_deterministic():
    a_train, a_test = synthetic_dataset(9, n_train=60, n_test=30)
    b_train, b_test = synthetic_dataset(9, n_train=60, n_test=30)
    assert np.array_equal(a_train.images, b_train.images)
    assert np.array_equal(a_test.images, b_test.images)
    assert a_train.dataset_id == b_train.dataset_id


def test_synthetic_seed_changes_content():
    a_train, _ = synthetic_dataset(9, n_train=60, n_test=30)
    b_train, _ = synthetic_dataset(10, n_train=60, n_test=30)
    assert not np.array_equal(a_train.images, b_train.images)
    assert a_train.dataset_id != b_train.dataset_id


def test_splits_share_collection_id():
    train_ds, test_ds = synthetic_dataset(4, n_train=40, n_test=20)
    assert train_ds.dataset_id == test_ds.dataset_id


def test_classes_are_separated():
    # Prototype noise is sigma=0.1 while prototypes differ by much more,
    # so a nearest-prototype read of the data should be nearly perfect.
    train_ds, test_ds = synthetic_dataset(2, n_train=500, n_test=100)
    protos = np.stack(
        [train_ds.images[train_ds.labels == k].mean(axis=0) for k in range(10)]
    )
    hits = 0
    for i in range(len(test_ds)):
        d = ((protos - test_ds.images[i]) ** 2).sum(axis=(1, 2, 3))
        hits += int(np.argmin(d)) == int(test_ds.labels[i])
    assert hits / len(test_ds) > 0.95


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _tiny_arrays():
    images = np.full((4, 1, 2, 2), 0.5)
    labels = np.array([0, 1, 0, 1])
    return images, labels


def test_dataset_rejects_out_of_range_pixels():
    images, labels = _tiny_arrays()
    images[0, 0, 0, 0] = 1.5
    cid = collection_id(2, (1, 2, 2), {"t": (images, labels)})
    with pytest.raises(DataError):
        Dataset(images, labels, "t", 2, cid)


def test_dataset_rejects_label_out_of_range():
    images, labels = _tiny_arrays()
    labels[1] = 2
    cid = collection_id(2, (1, 2, 2), {"t": (images, labels)})
    with pytest.raises(DataError):
        Dataset(images, labels, "t", 2, cid)


def test_dataset_arrays_frozen():
    images, labels = _tiny_arrays()
    cid = collection_id(2, (1, 2, 2), {"t": (images, labels)})
    ds = Dataset(images, labels, "t", 2, cid)
    with pytest.raises(ValueError):
        ds.images[0, 0, 0, 0] = 0.0


def test_collection_id_order_independent():
    images, labels = _tiny_arrays()
    a = collection_id(2, (1, 2, 2), {"x": (images, labels), "y": (images, labels)})
    b = collection_id(2, (1, 2, 2), {"y": (images, labels), "x": (images, labels)})
    assert a == b


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    train_ds, test_ds = synthetic_dataset(6, n_train=30, n_test=10)
    stem = tmp_path / "pair"
    save_datasets(stem, {"train": train_ds, "test": test_ds})
    loaded = load_datasets(stem)
    assert set(loaded) == {"train", "test"}
    assert np.array_equal(loaded["train"].images, train_ds.images)
    assert np.array_equal(loaded["test"].labels, test_ds.labels)
    assert loaded["train"].dataset_id == train_ds.dataset_id
    assert loaded["train"].seed == train_ds.seed


def test_save_is_deterministic(tmp_path):
    train_ds, test_ds = synthetic_dataset(6, n_train=30, n_test=10)
    save_datasets(tmp_path / "a", {"train": train_ds, "test": test_ds})
    save_datasets(tmp_path / "b", {"train": train_ds, "test": test_ds})
    for suffix in (".json", ".images.bin", ".labels.bin"):
        assert (tmp_path / f"a{suffix}").read_bytes() == (
            tmp_path / f"b{suffix}"
        ).read_bytes()


def test_save_rejects_mismatched_splits(tmp_path):
    a_train, _ = synthetic_dataset(1, n_train=20, n_test=10)
    b_train, _ = synthetic_dataset(2, n_train=20, n_test=10)
    with pytest.raises(ContractError):
        save_datasets(tmp_path / "bad", {"a": a_train, "b": b_train})


def test_load_detects_corrupt_blob(tmp_path):
    train_ds, test_ds = synthetic_dataset(6, n_train=20, n_test=10)
    stem = tmp_path / "pair"
    save_datasets(stem, {"train": train_ds, "test": test_ds})
    blob = (tmp_path / "pair.images.bin").read_bytes()
    flipped = bytes([blob[0] ^ 0x01]) + blob[1:]
    (tmp_path / "pair.images.bin").write_bytes(flipped)
    with pytest.raises(DataError):
        load_datasets(stem)


def test_load_detects_truncation(tmp_path):
    train_ds, test_ds = synthetic_dataset(6, n_train=20, n_test=10)
    stem = tmp_path / "pair"
    save_datasets(stem, {"train": train_ds, "test": test_ds})
    blob = (tmp_path / "pair.labels.bin").read_bytes()
    (tmp_path / "pair.labels.bin").write_bytes(blob[:-8])
    with pytest.raises(DataError):
        load_datasets(stem)


def test_load_missing_header(tmp_path):
    with pytest.raises(DataError):
        load_datasets(tmp_path / "absent")


# ---------------------------------------------------------------------------
# IDX import
# ---------------------------------------------------------------------------

def _write_idx(tmp_path, pixels, labels):
    n, rows, cols = pixels.shape
    images_path = tmp_path / "images.idx"
    labels_path = tmp_path / "labels.idx"
    images_path.write_bytes(
        struct.pack(">IIII", 0x803, n, rows, cols) + pixels.astype(">u1").tobytes()
    )
    labels_path.write_bytes(
        struct.pack(">II", 0x801, n) + labels.astype(">u1").tobytes()
    )
    return images_path, labels_path


def test_load_idx_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(5, 4, 4), dtype=np.uint8)
    labels = np.array([0, 1, 2, 3, 4], dtype=np.uint8)
    images_path, labels_path = _write_idx(tmp_path, pixels, labels)
    ds = load_idx(images_path, labels_path)
    assert ds.images.shape == (5, 1, 4, 4)
    assert np.array_equal(ds.labels, labels)
    assert np.allclose(ds.images[:, 0], pixels / 255.0)


def test_load_idx_bad_magic(tmp_path):
    pixels = np.zeros((2, 3, 3), dtype=np.uint8)
    labels = np.zeros(2, dtype=np.uint8)
    images_path, labels_path = _write_idx(tmp_path, pixels, labels)
    raw = images_path.read_bytes()
    images_path.write_bytes(struct.pack(">I", 0x999) + raw[4:])
    with pytest.raises(DataError):
        load_idx(images_path, labels_path)


def test_load_idx_count_mismatch(tmp_path):
    pixels = np.zeros((3, 2, 2), dtype=np.uint8)
    labels = np.zeros(3, dtype=np.uint8)
    images_path, labels_path = _write_idx(tmp_path, pixels, labels)
    raw = labels_path.read_bytes()
    labels_path.write_bytes(struct.pack(">II", 0x801, 5) + raw[8:])
    with pytest.raises(DataError):
        load_idx(images_path, labels_path)
