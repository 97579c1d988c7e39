import numpy as np
import pytest

from adfl import datagen, nn
from adfl.data import LabeledDataset, load_mnist


@pytest.fixture(scope="session")
def digit_dir(tmp_path_factory):
    """Synthetic digit corpus on disk, in the real IDX format."""
    d = tmp_path_factory.mktemp("digits")
    datagen.write_digits_idx(d, n_train=3000, n_test=800, seed=11)
    return d


@pytest.fixture(scope="session")
def digit_data(digit_dir):
    train, test = load_mnist(digit_dir)
    return train, test


@pytest.fixture(scope="session")
def small_arch():
    return nn.ModelArch(
        name="tiny_mlp",
        input_shape=(8, 8, 1),
        num_classes=3,
        layers=(nn.Flatten(), nn.Dense(64, 16), nn.Relu(), nn.Dense(16, 3)),
    )


def synth_images(rng, n, shape=(8, 8, 1)) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=(n,) + shape)


@pytest.fixture(scope="session")
def trained_digit_model(digit_data):
    """Small dense net trained past 95% accuracy on its own shard."""
    from adfl.data import ClientShard
    from adfl.protocol import ClientConfig, evaluate, local_train

    train, _ = digit_data
    rng = np.random.default_rng(7)
    idx = rng.choice(len(train), 800, replace=False)
    shard = ClientShard(
        client_id=0,
        dataset=train.subset(idx),
        present_labels=frozenset(range(10)),
        indices=idx,
    )
    params = nn.init_params(nn.mnist_mlp(64), 7)
    cfg = ClientConfig(local_epochs=30, batch_size=32, lr=0.3)
    params = local_train(params, shard, cfg, seed=7)
    shard_accuracy = evaluate(params, shard.dataset).accuracy
    assert shard_accuracy >= 0.95, f"fixture model reached only {shard_accuracy}"
    return params, shard


@pytest.fixture(scope="session")
def tiny_labeled(small_arch):
    """Tiny separable 3-class synthetic set: class decided by which
    image third is brightest."""
    rng = np.random.default_rng(42)
    images = synth_images(rng, 240)
    labels = rng.integers(0, 3, size=240)
    for i, lab in enumerate(labels):
        images[i, :, lab * 2 : lab * 2 + 3, :] += 1.2
    images = np.clip(images, 0.0, 1.0)
    return LabeledDataset(images, labels.astype(np.int64))
