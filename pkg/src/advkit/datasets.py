"""Image datasets: synthetic generation, IDX import, and on-disk format.

The on-disk layout for a dataset collection rooted at ``stem`` is

* ``<stem>.json`` — header {format_version, dataset_id, K, shape, counts, seed}
* ``<stem>.images.bin`` — little-endian float64 pixels, splits concatenated
* ``<stem>.labels.bin`` — little-endian float64 labels, same order

Splits are laid out in sorted name order inside the blobs.  The
``dataset_id`` is a sha256 over (K, shape, every split's pixels and
labels) and is verified on load, so silent corruption is impossible.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .ioutil import atomic_write_bytes, atomic_write_text, canonical_json

FORMAT_VERSION = 1

DEFAULT_CLASSES = 10
DEFAULT_IMAGE_SHAPE = (1, 16, 16)
DEFAULT_TRAIN_COUNT = 2000
DEFAULT_TEST_COUNT = 500

_PROTO_LOW, _PROTO_HIGH = 0.2, 0.8
_NOISE_SIGMA = 0.1


@dataclass(frozen=True)
class Dataset:
    """One split of labelled images.

    images: (n, C, H, W) float64 pixels in [0, 1]
    labels: (n,) integer class indices in [0, num_classes)
    dataset_id identifies the collection the split came from.
    """

    images: np.ndarray
    labels: np.ndarray
    split: str
    num_classes: int
    dataset_id: str
    seed: int | None = None

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise DataError(f"images must be (n, C, H, W), got shape {images.shape}")
        if labels.shape != (images.shape[0],):
            raise DataError(
                f"labels shape {labels.shape} does not match {images.shape[0]} images"
            )
        if self.num_classes < 2:
            raise DataError(f"num_classes must be >= 2, got {self.num_classes}")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise DataError("pixel values outside [0, 1]")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DataError(
                f"labels outside [0, {self.num_classes}): "
                f"range [{labels.min()}, {labels.max()}]"
            )
        if not self.split:
            raise DataError("split name must be non-empty")
        images.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])


def collection_id(
    num_classes: int,
    image_shape: tuple[int, ...],
    splits: dict[str, tuple[np.ndarray, np.ndarray]],
) -> str:
    """Content hash over every split of a dataset collection."""
    h = hashlib.sha256()
    h.update(b"advkit-dataset-v1\n")
    h.update(canonical_json({"K": num_classes, "shape": list(image_shape)}).encode())
    for name in sorted(splits):
        images, labels = splits[name]
        h.update(b"\n" + name.encode() + b"\n")
        h.update(struct.pack("<q", images.shape[0]))
        h.update(np.ascontiguousarray(images, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(labels, dtype="<f8").tobytes())
    return h.hexdigest()


def synthetic_dataset(
    seed: int,
    num_classes: int = DEFAULT_CLASSES,
    image_shape: tuple[int, int, int] = DEFAULT_IMAGE_SHAPE,
    n_train: int = DEFAULT_TRAIN_COUNT,
    n_test: int = DEFAULT_TEST_COUNT,
) -> tuple[Dataset, Dataset]:
    """Generate a (train, test) pair of noisy-prototype images.

    Each class gets a random prototype with pixels in [0.2, 0.8]; a
    sample is its class prototype plus N(0, 0.1^2) noise, clipped to
    [0, 1].  Labels cycle 0..K-1 so both splits are balanced.  Fully
    determined by ``seed``.
    """
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    if n_train < 1 or n_test < 1:
        raise ConfigError(f"split sizes must be >= 1, got {n_train}/{n_test}")
    if len(image_shape) != 3 or any(d < 1 for d in image_shape):
        raise ConfigError(f"image_shape must be (C, H, W), got {image_shape}")

    rng = np.random.default_rng(seed)
    prototypes = rng.uniform(_PROTO_LOW, _PROTO_HIGH, size=(num_classes, *image_shape))

    def make_split(n: int) -> tuple[np.ndarray, np.ndarray]:
        labels = np.arange(n, dtype=np.int64) % num_classes
        noise = rng.normal(0.0, _NOISE_SIGMA, size=(n, *image_shape))
        images = np.clip(prototypes[labels] + noise, 0.0, 1.0)
        return images, labels

    train_images, train_labels = make_split(n_train)
    test_images, test_labels = make_split(n_test)
    dataset_id = collection_id(
        num_classes,
        image_shape,
        {"train": (train_images, train_labels), "test": (test_images, test_labels)},
    )
    train = Dataset(train_images, train_labels, "train", num_classes, dataset_id, seed)
    test = Dataset(test_images, test_labels, "test", num_classes, dataset_id, seed)
    return train, test


# ---------------------------------------------------------------------------
# header + blob persistence
# ---------------------------------------------------------------------------

def _collection_paths(stem: str | Path):
    stem = Path(stem)
    return (
        stem.with_name(stem.name + ".json"),
        stem.with_name(stem.name + ".images.bin"),
        stem.with_name(stem.name + ".labels.bin"),
    )


def save_datasets(stem: str | Path, splits: dict[str, Dataset]) -> list[Path]:
    """Write a collection of splits under ``stem``; returns written paths."""
    if not splits:
        raise ContractError("save_datasets needs at least one split")
    members = list(splits.values())
    first = members[0]
    for ds in members:
        if (
            ds.num_classes != first.num_classes
            or ds.image_shape != first.image_shape
            or ds.dataset_id != first.dataset_id
            or ds.seed != first.seed
        ):
            raise ContractError("splits in one collection must share K/shape/id/seed")
    for name, ds in splits.items():
        if name != ds.split:
            raise ContractError(f"split key {name!r} does not match Dataset.split {ds.split!r}")

    header = {
        "format_version": FORMAT_VERSION,
        "dataset_id": first.dataset_id,
        "K": first.num_classes,
        "shape": list(first.image_shape),
        "counts": {name: len(ds) for name, ds in splits.items()},
        "seed": first.seed,
    }
    order = sorted(splits)
    images_blob = b"".join(
        np.ascontiguousarray(splits[n].images, dtype="<f8").tobytes() for n in order
    )
    labels_blob = b"".join(
        np.ascontiguousarray(splits[n].labels, dtype="<f8").tobytes() for n in order
    )
    header_path, images_path, labels_path = _collection_paths(stem)
    atomic_write_text(header_path, canonical_json(header))
    atomic_write_bytes(images_path, images_blob)
    atomic_write_bytes(labels_path, labels_blob)
    return [header_path, images_path, labels_path]


def load_datasets(stem: str | Path) -> dict[str, Dataset]:
    """Load a collection written by save_datasets, verifying its hash."""
    header_path, images_path, labels_path = _collection_paths(stem)
    try:
        header = json.loads(header_path.read_text())
    except FileNotFoundError:
        raise DataError(f"dataset header not found: {header_path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupt dataset header {header_path}: {exc}")
    for key in ("format_version", "dataset_id", "K", "shape", "counts", "seed"):
        if key not in header:
            raise DataError(f"dataset header missing field {key!r}")
    if header["format_version"] != FORMAT_VERSION:
        raise DataError(
            f"unsupported dataset format_version {header['format_version']!r} "
            f"(expected {FORMAT_VERSION})"
        )
    num_classes = header["K"]
    image_shape = tuple(header["shape"])
    counts = header["counts"]
    pixels_per_image = int(np.prod(image_shape))

    try:
        images_raw = images_path.read_bytes()
        labels_raw = labels_path.read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"dataset blob missing: {exc.filename}")
    total = sum(counts.values())
    if len(images_raw) != total * pixels_per_image * 8:
        raise DataError(
            f"{images_path} is {len(images_raw)} bytes, "
            f"expected {total * pixels_per_image * 8} (truncated or corrupt)"
        )
    if len(labels_raw) != total * 8:
        raise DataError(
            f"{labels_path} is {len(labels_raw)} bytes, expected {total * 8}"
        )
    all_images = np.frombuffer(images_raw, dtype="<f8").reshape(total, *image_shape)
    all_labels_f = np.frombuffer(labels_raw, dtype="<f8")
    if not np.array_equal(all_labels_f, np.floor(all_labels_f)):
        raise DataError("label blob contains non-integer values")
    all_labels = all_labels_f.astype(np.int64)

    out: dict[str, Dataset] = {}
    offset = 0
    raw_splits: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for name in sorted(counts):
        n = counts[name]
        images = all_images[offset:offset + n]
        labels = all_labels[offset:offset + n]
        raw_splits[name] = (images, labels)
        offset += n
    recomputed = collection_id(num_classes, image_shape, raw_splits)
    if recomputed != header["dataset_id"]:
        raise DataError(
            f"dataset content hash mismatch for {stem}: header says "
            f"{header['dataset_id'][:12]}…, blobs hash to {recomputed[:12]}…"
        )
    for name, (images, labels) in raw_splits.items():
        out[name] = Dataset(
            images, labels, name, num_classes, header["dataset_id"], header["seed"]
        )
    return out


# ---------------------------------------------------------------------------
# IDX import (MNIST-style)
# ---------------------------------------------------------------------------

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def load_idx(images_path: str | Path, labels_path: str | Path, split: str = "test") -> Dataset:
    """Import an IDX image/label file pair (big-endian, pixels scaled by /255)."""
    images_raw = Path(images_path).read_bytes()
    labels_raw = Path(labels_path).read_bytes()
    if len(images_raw) < 16 or len(labels_raw) < 8:
        raise DataError("IDX file too short for its header")
    magic, n, rows, cols = struct.unpack(">IIII", images_raw[:16])
    if magic != _IDX_IMAGES_MAGIC:
        raise DataError(f"bad IDX image magic 0x{magic:08x}")
    lmagic, ln = struct.unpack(">II", labels_raw[:8])
    if lmagic != _IDX_LABELS_MAGIC:
        raise DataError(f"bad IDX label magic 0x{lmagic:08x}")
    if ln != n:
        raise DataError(f"IDX pair disagrees on count: {n} images, {ln} labels")
    if len(images_raw) != 16 + n * rows * cols:
        raise DataError("IDX image payload size mismatch")
    if len(labels_raw) != 8 + n:
        raise DataError("IDX label payload size mismatch")
    pixels = np.frombuffer(images_raw, dtype=np.uint8, offset=16)
    images = (pixels / 255.0).reshape(n, 1, rows, cols)
    labels = np.frombuffer(labels_raw, dtype=np.uint8, offset=8).astype(np.int64)
    num_classes = int(labels.max()) + 1 if labels.size else 2
    num_classes = max(num_classes, 2)
    dataset_id = collection_id(num_classes, (1, rows, cols), {split: (images, labels)})
    return Dataset(images, labels, split, num_classes, dataset_id, None)
