"""Dataset ingestion, i.i.d. sharding, and the adversary's auxiliary samples.

Loaders cover the IDX binary image format, delimited tabular text with a
declared column schema, and seeded synthetic Gaussian blobs for runs where
no benchmark files are available.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InputError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Feature matrix, integer labels, class count."""

    features: np.ndarray  # (N, d) float64
    labels: np.ndarray  # (N,) int
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.features) != len(self.labels):
            raise InputError("features and labels differ in length")
        if len(self.labels) and self.labels.max() >= self.class_count:
            raise InputError("label out of range for class_count")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return Dataset(self.features[indices], self.labels[indices], self.class_count)


@dataclass
class Shard:
    """One agent's private index set into a Dataset."""

    owner: int
    indices: np.ndarray

    @property
    def size(self) -> int:
        return len(self.indices)


@dataclass
class AuxSet:
    """Adversary's held-out samples with true and target labels."""

    features: np.ndarray  # (r, d)
    true_labels: np.ndarray  # (r,)
    target_labels: np.ndarray  # (r,)
    pool_indices: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))

    def __post_init__(self):
        self.true_labels = np.asarray(self.true_labels, dtype=int)
        self.target_labels = np.asarray(self.target_labels, dtype=int)
        if np.any(self.true_labels == self.target_labels):
            raise InputError("every target label must differ from the true label")

    def __len__(self) -> int:
        return len(self.true_labels)


def _read_be32(f, path):
    data = f.read(4)
    if len(data) < 4:
        raise FormatError(f"{path}: truncated header", offset=f.tell() - len(data))
    return struct.unpack(">I", data)[0]


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label file pair; pixels scaled into [0, 1]."""
    with open(images_path, "rb") as f:
        magic = _read_be32(f, images_path)
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(f"{images_path}: bad image magic 0x{magic:08x}", offset=0)
        count = _read_be32(f, images_path)
        rows = _read_be32(f, images_path)
        cols = _read_be32(f, images_path)
        raw = f.read()
        expected = count * rows * cols
        if len(raw) < expected:
            raise FormatError(f"{images_path}: truncated pixel data "
                              f"({len(raw)} of {expected} bytes)", offset=16 + len(raw))
        pixels = np.frombuffer(raw[:expected], dtype=np.uint8)
        features = pixels.reshape(count, rows * cols).astype(float) / 255.0

    with open(labels_path, "rb") as f:
        magic = _read_be32(f, labels_path)
        if magic != IDX_LABEL_MAGIC:
            raise FormatError(f"{labels_path}: bad label magic 0x{magic:08x}", offset=0)
        label_count = _read_be32(f, labels_path)
        raw = f.read()
        if len(raw) < label_count:
            raise FormatError(f"{labels_path}: truncated label data "
                              f"({len(raw)} of {label_count} bytes)", offset=8 + len(raw))
        labels = np.frombuffer(raw[:label_count], dtype=np.uint8).astype(int)

    if label_count != count:
        raise FormatError(f"image count {count} != label count {label_count}")
    class_count = int(labels.max()) + 1 if count else 1
    return Dataset(features, labels, class_count)


def load_tabular(path, label_column: str, categorical_columns=(), numeric_columns=(),
                 label_values=None, delimiter: str = ",") -> Dataset:
    """Delimited text with a header row.

    Categorical columns are one-hot encoded over their sorted distinct
    values; numeric columns are min-max scaled to [0, 1]. Labels map onto
    indices either by `label_values` order or by sorted distinct value.
    """
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f, delimiter=delimiter)
        if reader.fieldnames is None:
            raise FormatError(f"{path}: missing header row")
        header = [h.strip() for h in reader.fieldnames]
        for col in [label_column, *categorical_columns, *numeric_columns]:
            if col not in header:
                raise FormatError(f"{path}: column {col!r} not in header {header}")
        rows = [{k.strip(): v.strip() for k, v in row.items()} for row in reader]
    if not rows:
        raise FormatError(f"{path}: no data rows")

    if label_values is None:
        label_values = sorted({row[label_column] for row in rows})
    label_index = {v: i for i, v in enumerate(label_values)}

    cat_values = {col: sorted({row[col] for row in rows}) for col in categorical_columns}
    num_ranges = {}
    for col in numeric_columns:
        vals = np.array([float(row[col]) for row in rows])
        lo, hi = vals.min(), vals.max()
        num_ranges[col] = (lo, hi - lo if hi > lo else 1.0)

    features = []
    labels = []
    for row in rows:
        if row[label_column] not in label_index:
            raise FormatError(f"{path}: unknown label value {row[label_column]!r}")
        vec = []
        for col in numeric_columns:
            lo, span = num_ranges[col]
            vec.append((float(row[col]) - lo) / span)
        for col in categorical_columns:
            onehot = [0.0] * len(cat_values[col])
            onehot[cat_values[col].index(row[col])] = 1.0
            vec.extend(onehot)
        features.append(vec)
        labels.append(label_index[row[label_column]])
    return Dataset(np.array(features), np.array(labels), len(label_values))


def make_synthetic(class_count: int, dim: int, per_class: int, spread: float,
                   seed: int) -> Dataset:
    """Gaussian blobs, one mean per class on scaled axis-aligned unit vectors.

    Class c has mean `mean_scale * (1 + c // dim) * e_{c mod dim}` so means
    stay distinct when class_count exceeds dim. Deterministic in seed.
    """
    if class_count <= 0 or dim <= 0 or per_class <= 0:
        raise InputError("class_count, dim and per_class must be positive")
    if spread < 0:
        raise InputError("spread must be >= 0")
    rng = np.random.default_rng(seed)
    mean_scale = 2.5
    features = np.empty((class_count * per_class, dim))
    labels = np.empty(class_count * per_class, dtype=int)
    for c in range(class_count):
        mean = np.zeros(dim)
        mean[c % dim] = mean_scale * (1 + c // dim)
        block = slice(c * per_class, (c + 1) * per_class)
        features[block] = mean + spread * rng.standard_normal((per_class, dim))
        labels[block] = c
    order = rng.permutation(len(labels))
    return Dataset(features[order], labels[order], class_count)


def split_train_val(dataset: Dataset, train_size: int, val_size: int, seed: int,
                    stratified: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint (train_indices, val_indices) into `dataset`.

    Stratified mode balances classes proportionally in both splits.
    """
    n = len(dataset)
    if train_size + val_size > n:
        raise InputError(f"train {train_size} + val {val_size} exceeds dataset size {n}")
    rng = np.random.default_rng(seed)
    if not stratified:
        order = rng.permutation(n)
        return order[:train_size], order[train_size:train_size + val_size]

    train_parts, val_parts = [], []
    taken_train = taken_val = 0
    classes = np.unique(dataset.labels)
    for i, c in enumerate(classes):
        members = rng.permutation(np.flatnonzero(dataset.labels == c))
        # distribute remainders onto the trailing classes so totals are exact
        remaining = len(classes) - i
        want_train = (train_size - taken_train + remaining - 1) // remaining
        want_val = (val_size - taken_val + remaining - 1) // remaining
        want_train = min(want_train, train_size - taken_train)
        want_val = min(want_val, val_size - taken_val)
        if want_train + want_val > len(members):
            raise InputError(f"class {c} has too few samples for a stratified split")
        train_parts.append(members[:want_train])
        val_parts.append(members[want_train:want_train + want_val])
        taken_train += want_train
        taken_val += want_val
    train_idx = rng.permutation(np.concatenate(train_parts))
    val_idx = rng.permutation(np.concatenate(val_parts))
    return train_idx, val_idx


def shard_iid(dataset: Dataset, num_agents: int, seed: int) -> list[Shard]:
    """Seeded uniform shuffle split into near-equal disjoint shards."""
    if num_agents <= 0:
        raise InputError("num_agents must be >= 1")
    if num_agents > len(dataset):
        raise InputError(f"cannot shard {len(dataset)} samples across {num_agents} agents")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    blocks = np.array_split(order, num_agents)
    return [Shard(owner=i, indices=block) for i, block in enumerate(blocks)]


def pick_aux(pool: Dataset, count: int, source_class=None, target_class=None,
             seed: int = 0) -> AuxSet:
    """Choose the adversary's auxiliary samples from a held-out pool.

    Single-source mode (source_class given): `count` samples of that class,
    all targeted at target_class. Mixed mode (source_class None): `count`
    samples drawn across the pool, each with a random target != true label.
    """
    if count < 1:
        raise InputError("aux count must be >= 1")
    rng = np.random.default_rng(seed)
    if source_class is not None:
        if target_class is None or target_class == source_class:
            raise InputError("target_class must be set and differ from source_class")
        candidates = np.flatnonzero(pool.labels == source_class)
        if len(candidates) < count:
            raise InputError(f"pool has {len(candidates)} samples of class "
                             f"{source_class}, need {count}")
        chosen = rng.choice(candidates, size=count, replace=False)
        targets = np.full(count, target_class, dtype=int)
    else:
        if pool.class_count < 2:
            raise InputError("mixed-mode aux needs at least 2 classes")
        chosen = rng.choice(len(pool), size=count, replace=False)
        shifts = rng.integers(1, pool.class_count, size=count)
        targets = (pool.labels[chosen] + shifts) % pool.class_count
    return AuxSet(pool.features[chosen], pool.labels[chosen], targets, chosen)
