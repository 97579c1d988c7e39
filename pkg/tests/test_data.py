import gzip
import struct

import numpy as np
import pytest

from adfl import data, datagen
from adfl.data import LabeledDataset, SkewConfig


# ---------------------------------------------------------------------------
# MNIST IDX format


def idx_header(path):
    """Independent header dump: read the raw big-endian words directly."""
    with open(path, "rb") as f:
        return struct.unpack(">IIII", f.read(16))


def test_idx_headers_match_independent_dump(digit_dir):
    magic, count, rows, cols = idx_header(digit_dir / "train-images-idx3-ubyte")
    assert magic == 2051
    assert count == 3000
    assert (rows, cols) == (28, 28)
    with open(digit_dir / "train-labels-idx1-ubyte", "rb") as f:
        magic, count = struct.unpack(">II", f.read(8))
    assert magic == 2049
    assert count == 3000


def test_loader_counts_match_headers(digit_data):
    train, test = digit_data
    assert train.images.shape == (3000, 28, 28, 1)
    assert len(train.labels) == 3000
    assert test.images.shape == (800, 28, 28, 1)


def test_pixel_byte_255_scales_to_one(tmp_path):
    images = np.zeros((2, 4, 4), dtype=np.uint8)
    images[0, 0, 0] = 255
    images[1, 2, 3] = 128
    datagen._write_idx_images(tmp_path / "train-images-idx3-ubyte", images)
    datagen._write_idx_labels(tmp_path / "train-labels-idx1-ubyte", np.array([1, 2], dtype=np.uint8))
    datagen._write_idx_images(tmp_path / "t10k-images-idx3-ubyte", images[:1])
    datagen._write_idx_labels(tmp_path / "t10k-labels-idx1-ubyte", np.array([0], dtype=np.uint8))
    train, _ = data.load_mnist(tmp_path)
    assert train.images[0, 0, 0, 0] == 1.0
    assert train.images[1, 2, 3, 0] == pytest.approx(128 / 255)
    assert train.labels.tolist() == [1, 2]


def test_loader_accepts_gzip(tmp_path, digit_dir):
    for name in (
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ):
        with open(digit_dir / name, "rb") as f:
            payload = f.read()
        with gzip.open(tmp_path / (name + ".gz"), "wb") as f:
            f.write(payload)
    train, test = data.load_mnist(tmp_path)
    assert len(train) == 3000 and len(test) == 800


def test_loader_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        data.load_mnist(tmp_path)
    bad = tmp_path / "train-images-idx3-ubyte"
    with open(bad, "wb") as f:
        f.write(struct.pack(">IIII", 1234, 1, 4, 4) + b"\x00" * 16)
    with pytest.raises(ValueError, match="bad magic"):
        data._read_idx_images(bad)
    with open(bad, "wb") as f:
        f.write(struct.pack(">IIII", 2051, 2, 4, 4) + b"\x00" * 16)  # half missing
    with pytest.raises(ValueError, match="truncated"):
        data._read_idx_images(bad)


def test_all_pixels_unit_interval(digit_data):
    train, test = digit_data
    for part in (train, test):
        assert part.images.min() >= 0.0 and part.images.max() <= 1.0


# ---------------------------------------------------------------------------
# CIFAR-10 binary format


@pytest.fixture(scope="module")
def cifar_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cifar")
    datagen.write_cifar_batches(d, n_train=250, n_test=60, seed=5)
    return d


def test_cifar_batch_file_size(cifar_dir):
    size = (cifar_dir / "data_batch_1.bin").stat().st_size
    assert size % 3073 == 0
    assert size == 50 * 3073  # 250 records over 5 batches


def decode_record_by_offsets(raw: bytes, i: int):
    """Byte-offset oracle for one CIFAR record: label byte, then 1024
    bytes per channel plane, row-major."""
    base = i * 3073
    label = raw[base]
    img = np.zeros((32, 32, 3))
    for ch in range(3):
        for r in range(32):
            for c in range(32):
                img[r, c, ch] = raw[base + 1 + ch * 1024 + r * 32 + c] / 255.0
    return label, img


def test_cifar_decoding_matches_byte_offset_oracle(cifar_dir):
    with open(cifar_dir / "data_batch_1.bin", "rb") as f:
        raw = f.read()
    train, _ = data.load_cifar10(cifar_dir)
    for i in range(10):
        label, img = decode_record_by_offsets(raw, i)
        assert train.labels[i] == label
        assert np.array_equal(train.images[i], img)


def test_cifar_label_bytes_in_range(cifar_dir):
    with open(cifar_dir / "data_batch_1.bin", "rb") as f:
        raw = f.read()
    assert 0 <= raw[0] <= 9


def test_cifar_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        data.load_cifar10(tmp_path)
    bad = tmp_path / "data_batch_1.bin"
    with open(bad, "wb") as f:
        f.write(b"\x00" * 5000)  # not a multiple of 3073
    with pytest.raises(ValueError, match="3073"):
        data._read_cifar_batch(bad)


# ---------------------------------------------------------------------------
# Label-skew partitioning


def toy_dataset(n=20000, num_classes=10, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=n).astype(np.int64)
    images = rng.uniform(0, 1, size=(n, 1, 1, 1))
    return LabeledDataset(images, labels)


TABLE_PROBS = (0.035, 0.045, 0.10, 0.21, 0.21, 0.20, 0.10, 0.045, 0.035, 0.02)


def test_uniform_probs_full_labels():
    ds = toy_dataset(2000)
    cfg = SkewConfig(label_probs=(0.1,) * 10, labels_per_client=10, num_clients=5, samples_per_client=40)
    shards = data.partition_label_skew(ds, cfg, seed=1)
    for shard in shards:
        assert shard.present_labels == frozenset(range(10))


def test_single_label_extreme_skew():
    ds = toy_dataset(2000)
    cfg = SkewConfig(label_probs=(0.1,) * 10, labels_per_client=1, num_clients=8, samples_per_client=30)
    for shard in data.partition_label_skew(ds, cfg, seed=3):
        assert len(shard.present_labels) == 1
        assert len(set(shard.dataset.labels)) == 1


def test_shard_invariants():
    ds = toy_dataset()
    cfg = SkewConfig(label_probs=TABLE_PROBS, labels_per_client=3, num_clients=30, samples_per_client=100)
    shards = data.partition_label_skew(ds, cfg, seed=9)
    assert len(shards) == 30
    for shard in shards:
        assert len(shard.present_labels) == 3
        assert set(shard.dataset.labels) <= shard.present_labels
        assert len(shard.dataset) == 100
        # within-client sampling is without replacement
        assert len(np.unique(shard.indices)) == len(shard.indices)
        # even split across present labels, +-1
        counts = [int(np.sum(shard.dataset.labels == c)) for c in shard.present_labels]
        assert max(counts) - min(counts) <= 1


def test_partition_deterministic():
    ds = toy_dataset()
    cfg = SkewConfig(label_probs=TABLE_PROBS, labels_per_client=3, num_clients=10, samples_per_client=60)
    a = data.partition_label_skew(ds, cfg, seed=4)
    b = data.partition_label_skew(ds, cfg, seed=4)
    c = data.partition_label_skew(ds, cfg, seed=5)
    assert [tuple(s.indices) for s in a] == [tuple(s.indices) for s in b]
    assert [tuple(s.indices) for s in a] != [tuple(s.indices) for s in c]


def test_partition_errors():
    ds = toy_dataset(100)
    cfg = SkewConfig(label_probs=(0.5, 0.5), labels_per_client=2, num_clients=2, samples_per_client=500)
    with pytest.raises(ValueError, match="pool exhaustion"):
        data.partition_label_skew(LabeledDataset(ds.images, ds.labels % 2), cfg, seed=0)
    with pytest.raises(ValueError, match="label_probs"):
        SkewConfig(label_probs=(0.5, 0.4), labels_per_client=1, num_clients=1, samples_per_client=1)
    with pytest.raises(ValueError, match="labels_per_client"):
        SkewConfig(label_probs=(1.0, 0.0), labels_per_client=2, num_clients=1, samples_per_client=1)


def mc_inclusion_probability(probs, k, n_draws=100_000, seed=77):
    """Monte-Carlo oracle: sequential weighted draws without
    replacement, reimplemented independently of the library."""
    rng = np.random.default_rng(seed)
    probs = np.asarray(probs, dtype=float)
    hits = np.zeros(len(probs))
    for _ in range(n_draws):
        remaining = list(range(len(probs)))
        weights = probs.copy()
        for _ in range(k):
            w = weights[remaining] / weights[remaining].sum()
            j = rng.choice(len(remaining), p=w)
            hits[remaining[j]] += 1
            remaining.pop(j)
    return hits / n_draws


@pytest.fixture(scope="module")
def table_inclusion():
    return mc_inclusion_probability(TABLE_PROBS, 3)


def test_table_probs_expected_presence_bands(table_inclusion):
    # common labels appear on most clients, rare ones on few
    assert all(table_inclusion[c] > 0.5 for c in (3, 4, 5))
    assert all(table_inclusion[c] < 0.15 for c in (0, 8, 9))


def test_presence_frequency_converges_to_oracle(table_inclusion):
    ds = toy_dataset()
    n_clients = 1500
    cfg = SkewConfig(label_probs=TABLE_PROBS, labels_per_client=3, num_clients=n_clients, samples_per_client=6)
    shards = data.partition_label_skew(ds, cfg, seed=21)
    realized = data.label_presence_counts(shards, 10) / n_clients
    for c in range(10):
        p = table_inclusion[c]
        se = np.sqrt(p * (1 - p) / n_clients + p * (1 - p) / 100_000)
        assert abs(realized[c] - p) <= 3 * se, f"label {c}: {realized[c]} vs {p}"


# ---------------------------------------------------------------------------
# Federation split


def test_make_split_balanced_test():
    ds = toy_dataset(6000, seed=1)
    test_ds = toy_dataset(4000, seed=2)
    cfg = SkewConfig(label_probs=TABLE_PROBS, labels_per_client=3, num_clients=10, samples_per_client=60)
    split = data.make_split(ds, test_ds, cfg, n_validation=2, test_size=1000, seed=0)
    counts = np.bincount(split.iid_test.labels, minlength=10)
    assert counts.tolist() == [100] * 10
    assert len(split.train_shards) == 10
    assert len(split.validation_shards) == 2


def test_make_split_no_validation():
    ds = toy_dataset(4000, seed=1)
    test_ds = toy_dataset(2000, seed=2)
    cfg = SkewConfig(label_probs=(0.1,) * 10, labels_per_client=3, num_clients=5, samples_per_client=30)
    split = data.make_split(ds, test_ds, cfg, n_validation=0, test_size=100, seed=0)
    assert split.validation_shards == []
    assert len(split.validation_pool) == 0


def test_make_split_disjointness_by_index():
    ds = toy_dataset(8000, seed=3)
    test_ds = toy_dataset(3000, seed=4)
    cfg = SkewConfig(label_probs=TABLE_PROBS, labels_per_client=3, num_clients=8, samples_per_client=90)
    split = data.make_split(ds, test_ds, cfg, n_validation=3, test_size=500, seed=6)
    train_pool = set(split.train_pool.tolist())
    val_pool = set(split.validation_pool.tolist())
    assert not train_pool & val_pool
    for shard in split.train_shards:
        assert set(shard.indices.tolist()) <= train_pool
    for shard in split.validation_shards:
        assert set(shard.indices.tolist()) <= val_pool
    # iid test comes from the test partition: indices address test_ds
    assert len(split.iid_test_indices) == 500
    assert np.array_equal(test_ds.labels[split.iid_test_indices], split.iid_test.labels)
