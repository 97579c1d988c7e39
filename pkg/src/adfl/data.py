"""Dataset loading and label-skewed federation splits.

Loaders parse the standard on-disk formats directly:

  MNIST IDX     big-endian headers; magic 2051 for images (count, rows,
                cols follow), 2049 for labels; raw uint8 payload.
                Plain or gzipped files are accepted.
  CIFAR-10      binary batches of 3073-byte records: 1 label byte then
                3072 pixel bytes, channel-planar R, G, B; row-major
                32x32 per plane.

Pixels are scaled to [0, 1] float64. No downloading happens here; see
scripts/fetch_data.py for fetching the real archives.

The partitioner reproduces presence-probability label skew: each client
draws a fixed-size subset of labels (weighted, sequential, without
replacement) and then samples its local images only from those labels,
split evenly across them.
"""

import gzip
import os
import struct
from dataclasses import dataclass, replace

import numpy as np

from .rng import STREAM_PARTITION, STREAM_SPLIT, child_rng, seed_key

MNIST_IMAGE_MAGIC = 2051
MNIST_LABEL_MAGIC = 2049
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 32*32*3 pixels


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, H, W, C) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[idx], self.labels[idx])


@dataclass(frozen=True)
class SkewConfig:
    label_probs: tuple  # C nonnegative reals summing to 1
    labels_per_client: int
    num_clients: int
    samples_per_client: int

    def __post_init__(self):
        probs = np.asarray(self.label_probs, dtype=np.float64)
        if probs.ndim != 1 or np.any(probs < 0):
            raise ValueError("label_probs must be a vector of nonnegative reals")
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"label_probs sum to {probs.sum()}, expected 1")
        n_positive = int(np.count_nonzero(probs))
        if not 1 <= self.labels_per_client <= n_positive:
            raise ValueError(
                f"labels_per_client={self.labels_per_client} must be in "
                f"[1, {n_positive}] (labels with positive probability)"
            )
        if self.num_clients < 1 or self.samples_per_client < 1:
            raise ValueError("num_clients and samples_per_client must be positive")


@dataclass
class ClientShard:
    client_id: int
    dataset: LabeledDataset
    present_labels: frozenset
    indices: np.ndarray  # positions in the source dataset, for audits


@dataclass
class FederationSplit:
    train_shards: list
    validation_shards: list
    iid_test: LabeledDataset
    # Index bookkeeping so disjointness is checkable after the fact.
    train_pool: np.ndarray  # train-partition indices shards may draw from
    validation_pool: np.ndarray  # disjoint train-partition indices
    iid_test_indices: np.ndarray  # test-partition indices


# ---------------------------------------------------------------------------
# MNIST IDX


def _open_maybe_gz(path):
    if os.path.exists(path):
        return open(path, "rb")
    if os.path.exists(path + ".gz"):
        return gzip.open(path + ".gz", "rb")
    raise FileNotFoundError(f"missing dataset file: {path}[.gz]")


def _read_idx_images(path) -> np.ndarray:
    with _open_maybe_gz(path) as f:
        header = f.read(16)
        if len(header) < 16:
            raise ValueError(f"{path}: truncated IDX header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != MNIST_IMAGE_MAGIC:
            raise ValueError(f"{path}: bad magic {magic}, expected {MNIST_IMAGE_MAGIC}")
        payload = f.read(count * rows * cols)
        if len(payload) < count * rows * cols:
            raise ValueError(f"{path}: truncated image payload")
        data = np.frombuffer(payload, dtype=np.uint8)
    return data.reshape(count, rows, cols, 1).astype(np.float64) / 255.0


def _read_idx_labels(path) -> np.ndarray:
    with _open_maybe_gz(path) as f:
        header = f.read(8)
        if len(header) < 8:
            raise ValueError(f"{path}: truncated IDX header")
        magic, count = struct.unpack(">II", header)
        if magic != MNIST_LABEL_MAGIC:
            raise ValueError(f"{path}: bad magic {magic}, expected {MNIST_LABEL_MAGIC}")
        payload = f.read(count)
        if len(payload) < count:
            raise ValueError(f"{path}: truncated label payload")
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def load_mnist(data_dir) -> tuple[LabeledDataset, LabeledDataset]:
    """Load the four standard IDX files from `data_dir`.

    Returns (train, test). For the real dataset that is 60000 + 10000
    28x28x1 images with pixels divided by 255.
    """

    def part(images_name, labels_name):
        images = _read_idx_images(os.path.join(data_dir, images_name))
        labels = _read_idx_labels(os.path.join(data_dir, labels_name))
        if len(images) != len(labels):
            raise ValueError("image/label count mismatch")
        return LabeledDataset(images, labels)

    train = part("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
    test = part("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    return train, test


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches


def _read_cifar_batch(path) -> tuple[np.ndarray, np.ndarray]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing dataset file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD_BYTES != 0:
        raise ValueError(
            f"{path}: size {raw.size} is not a multiple of {CIFAR_RECORD_BYTES}"
        )
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise ValueError(f"{path}: label byte out of range [0, 9]")
    # channel-planar R, G, B -> (N, 32, 32, 3)
    pixels = records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return pixels.astype(np.float64) / 255.0, labels


def load_cifar10(data_dir) -> tuple[LabeledDataset, LabeledDataset]:
    """Load binary CIFAR-10 batches from `data_dir` (or the standard
    `cifar-10-batches-bin` subdirectory). Returns (train, test)."""
    sub = os.path.join(data_dir, "cifar-10-batches-bin")
    if os.path.isdir(sub):
        data_dir = sub
    train_parts = [
        _read_cifar_batch(os.path.join(data_dir, f"data_batch_{i}.bin"))
        for i in range(1, 6)
    ]
    train = LabeledDataset(
        np.concatenate([p[0] for p in train_parts]),
        np.concatenate([p[1] for p in train_parts]),
    )
    test_images, test_labels = _read_cifar_batch(os.path.join(data_dir, "test_batch.bin"))
    return train, LabeledDataset(test_images, test_labels)


def load_dataset(name, data_dir) -> tuple[LabeledDataset, LabeledDataset]:
    if name == "mnist":
        return load_mnist(data_dir)
    if name == "cifar10":
        return load_cifar10(data_dir)
    raise ValueError(f"unknown dataset {name!r}")


# ---------------------------------------------------------------------------
# Label-skew partitioning


def draw_present_labels(probs: np.ndarray, k: int, rng) -> list[int]:
    """Draw k distinct labels: sequential weighted draws without
    replacement, renormalizing after each draw."""
    remaining = list(np.flatnonzero(probs > 0))
    weights = probs[remaining].astype(np.float64)
    picked = []
    for _ in range(k):
        weights = weights / weights.sum()
        j = rng.choice(len(remaining), p=weights)
        picked.append(int(remaining.pop(j)))
        weights = np.delete(weights, j)
    return picked


def _even_counts(total: int, bins: int) -> list[int]:
    base, extra = divmod(total, bins)
    return [base + (1 if i < extra else 0) for i in range(bins)]


def _partition_pool(data, pool, cfg: SkewConfig, seed_key, first_client_id=0):
    probs = np.asarray(cfg.label_probs, dtype=np.float64)
    pool = np.asarray(pool, dtype=np.int64)
    by_label = {
        int(c): pool[data.labels[pool] == c] for c in range(len(probs))
    }
    shards = []
    for i in range(cfg.num_clients):
        rng = child_rng(seed_key, i)
        labels = draw_present_labels(probs, cfg.labels_per_client, rng)
        counts = _even_counts(cfg.samples_per_client, len(labels))
        picked = []
        for label, count in zip(labels, counts):
            candidates = by_label[label]
            if len(candidates) < count:
                raise ValueError(
                    f"pool exhaustion: label {label} has {len(candidates)} "
                    f"samples, client needs {count}"
                )
            picked.append(rng.choice(candidates, size=count, replace=False))
        indices = np.concatenate(picked)
        rng.shuffle(indices)
        shards.append(
            ClientShard(
                client_id=first_client_id + i,
                dataset=data.subset(indices),
                present_labels=frozenset(labels),
                indices=indices,
            )
        )
    return shards


def partition_label_skew(data: LabeledDataset, cfg: SkewConfig, seed) -> list:
    """Carve `data` into cfg.num_clients label-skewed shards.

    Per client: draw cfg.labels_per_client distinct labels weighted by
    cfg.label_probs, then sample cfg.samples_per_client images uniformly
    without replacement (within the client) from those labels, split
    evenly (+-1) across them. Deterministic for a fixed seed; different
    clients may reuse the same source image.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    return _partition_pool(
        data, np.arange(len(data)), cfg, seed_key(seed, STREAM_PARTITION)
    )


def make_split(
    train_data: LabeledDataset,
    test_data: LabeledDataset,
    cfg: SkewConfig,
    n_validation: int,
    test_size: int,
    seed,
) -> FederationSplit:
    """Build the full federation: skewed training shards, skewed
    validation shards from a disjoint pool, and a class-balanced IID
    test set drawn from the test partition."""
    num_classes = len(cfg.label_probs)
    rng = child_rng(seed, STREAM_SPLIT)

    # Class-balanced IID test: test_size split evenly (+-1) over classes.
    test_counts = _even_counts(test_size, num_classes)
    test_picks = []
    for c, count in zip(range(num_classes), test_counts):
        candidates = np.flatnonzero(test_data.labels == c)
        if len(candidates) < count:
            raise ValueError(
                f"pool exhaustion: test partition has {len(candidates)} "
                f"samples of class {c}, need {count}"
            )
        test_picks.append(rng.choice(candidates, size=count, replace=False))
    iid_test_indices = np.sort(np.concatenate(test_picks))
    iid_test = test_data.subset(iid_test_indices)

    # Disjoint train/validation pools, stratified per label. Clients
    # sample with replacement across clients, so a pool only has to
    # cover the largest single-client take per label; reserve at least
    # 1.2x that for validation when the label pool allows it.
    all_idx = np.arange(len(train_data))
    if n_validation > 0:
        per_label_take = -(-cfg.samples_per_client // cfg.labels_per_client)
        frac = n_validation / (cfg.num_clients + n_validation)
        val_parts, train_parts = [], []
        for c in range(num_classes):
            candidates = np.flatnonzero(train_data.labels == c)
            perm = rng.permutation(candidates)
            proportional = int(np.ceil(frac * len(perm)))
            floor = int(np.ceil(1.2 * per_label_take))
            n_val = min(max(proportional, floor), max(len(perm) - per_label_take, 0))
            val_parts.append(perm[:n_val])
            train_parts.append(perm[n_val:])
        validation_pool = np.sort(np.concatenate(val_parts))
        train_pool = np.sort(np.concatenate(train_parts))
    else:
        validation_pool = np.empty(0, dtype=np.int64)
        train_pool = all_idx

    train_shards = _partition_pool(
        train_data, train_pool, cfg, seed_key(seed, STREAM_PARTITION, 0)
    )
    validation_shards = []
    if n_validation > 0:
        val_cfg = replace(cfg, num_clients=n_validation)
        validation_shards = _partition_pool(
            train_data,
            validation_pool,
            val_cfg,
            seed_key(seed, STREAM_PARTITION, 1),
            first_client_id=cfg.num_clients,
        )

    return FederationSplit(
        train_shards=train_shards,
        validation_shards=validation_shards,
        iid_test=iid_test,
        train_pool=train_pool,
        validation_pool=validation_pool,
        iid_test_indices=iid_test_indices,
    )


def label_presence_counts(shards, num_classes: int) -> np.ndarray:
    """How many shards contain each label."""
    counts = np.zeros(num_classes, dtype=np.int64)
    for shard in shards:
        for c in shard.present_labels:
            counts[c] += 1
    return counts
