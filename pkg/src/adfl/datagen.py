"""Synthetic image corpora written in the real on-disk formats.

`write_digits_idx` renders noisy digit glyphs and emits the four MNIST
IDX files; `write_cifar_batches` emits CIFAR-10-format binary batches of
colored patterns. Both are deterministic per seed, so experiments and
tests run end-to-end through the production loaders on machines where
the benchmark archives cannot be downloaded.
"""

import os
import struct

import numpy as np

from .rng import child_rng

# 5x7 bitmap font, one string row per scanline.
_FONT = {
    0: ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    1: ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    2: ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    3: ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    4: ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    5: ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    6: ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    7: ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    8: ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    9: ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}

_GLYPHS = {
    d: np.kron(
        np.array([[int(ch) for ch in row] for row in rows], dtype=np.float64),
        np.ones((3, 3)),
    )
    for d, rows in _FONT.items()
}  # 21x15 per digit


def _blur(img: np.ndarray) -> np.ndarray:
    out = img.copy()
    for axis in (0, 1):
        padded = np.pad(out, [(1, 1) if a == axis else (0, 0) for a in (0, 1)], mode="edge")
        lo = np.take(padded, range(0, img.shape[axis]), axis=axis)
        hi = np.take(padded, range(2, img.shape[axis] + 2), axis=axis)
        out = 0.25 * lo + 0.5 * out + 0.25 * hi
    return out


def render_digit(label: int, rng, noise: float = 0.30) -> np.ndarray:
    """One 28x28 grayscale glyph with random shear, stroke dropout,
    offset, intensity, blur, and additive noise. Pixels in [0, 1].

    Defaults are tuned so a small dense net on a few hundred samples
    lands mid-range, not at ceiling - label-skew effects stay visible.
    """
    glyph = _GLYPHS[label]
    h, w = glyph.shape
    slant = rng.uniform(-0.3, 0.3)
    sheared = np.zeros((h, w + 6))
    for r in range(h):
        shift = int(round(slant * (r - h / 2)))
        sheared[r, 3 + shift : 3 + shift + w] = glyph[r]
    sheared *= rng.random(sheared.shape) > 0.15
    canvas = np.zeros((28, 28))
    top = rng.integers(1, 7)
    left = rng.integers(0, 28 - sheared.shape[1] + 1)
    canvas[top : top + h, left : left + sheared.shape[1]] = sheared
    canvas *= rng.uniform(0.5, 1.0)
    canvas = _blur(_blur(canvas))
    canvas += rng.normal(0.0, noise, canvas.shape)
    return np.clip(canvas, 0.0, 1.0)


def digit_corpus(n: int, seed, noise: float = 0.30):
    """Balanced labels (counts within +-1), shuffled; uint8 images."""
    rng = child_rng(seed, 91)
    labels = rng.permutation(np.arange(n) % 10).astype(np.uint8)
    images = np.empty((n, 28, 28), dtype=np.uint8)
    for i, lab in enumerate(labels):
        images[i] = np.round(render_digit(int(lab), rng, noise) * 255).astype(np.uint8)
    return images, labels


def _write_idx_images(path, images: np.ndarray):
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, n, rows, cols))
        f.write(images.tobytes())


def _write_idx_labels(path, labels: np.ndarray):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def write_digits_idx(data_dir, n_train=8000, n_test=1500, seed=0, noise=0.30):
    """Write a synthetic digit corpus as the four standard MNIST IDX files."""
    os.makedirs(data_dir, exist_ok=True)
    train_images, train_labels = digit_corpus(n_train, (seed, 0), noise)
    test_images, test_labels = digit_corpus(n_test, (seed, 1), noise)
    _write_idx_images(os.path.join(data_dir, "train-images-idx3-ubyte"), train_images)
    _write_idx_labels(os.path.join(data_dir, "train-labels-idx1-ubyte"), train_labels)
    _write_idx_images(os.path.join(data_dir, "t10k-images-idx3-ubyte"), test_images)
    _write_idx_labels(os.path.join(data_dir, "t10k-labels-idx1-ubyte"), test_labels)


# ---------------------------------------------------------------------------
# CIFAR-10-format color patterns

_PALETTE = np.array(
    [
        (220, 60, 60),
        (60, 200, 60),
        (70, 90, 230),
        (230, 200, 50),
        (200, 60, 200),
        (60, 210, 210),
        (240, 140, 40),
        (140, 80, 200),
        (120, 200, 120),
        (180, 180, 180),
    ],
    dtype=np.float64,
)


def render_pattern(label: int, rng) -> np.ndarray:
    """One 32x32x3 image: class-colored shape on a dim background."""
    color = _PALETTE[label] / 255.0
    img = np.tile(color * 0.25, (32, 32, 1))
    yy, xx = np.mgrid[0:32, 0:32]
    cy, cx = rng.integers(10, 22, size=2)
    kind = label % 3
    if kind == 0:
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= (6 + label) ** 2
    elif kind == 1:
        half = 5 + label // 2
        mask = (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
    else:
        period = 4 + label // 3
        mask = ((yy + xx + rng.integers(0, period)) % period) < period // 2
    img[mask] = color
    img += rng.normal(0.0, 0.08, img.shape)
    return np.clip(img, 0.0, 1.0)


def write_cifar_batches(data_dir, n_train=2500, n_test=500, seed=0):
    """Write synthetic CIFAR-10-format batches: five data_batch_*.bin
    files plus test_batch.bin, 3073-byte records each."""
    os.makedirs(data_dir, exist_ok=True)
    rng = child_rng(seed, 92)

    def records(n, stream):
        labels = stream.permutation(np.arange(n) % 10).astype(np.uint8)
        out = np.empty((n, 3073), dtype=np.uint8)
        for i, lab in enumerate(labels):
            img = np.round(render_pattern(int(lab), stream) * 255).astype(np.uint8)
            out[i, 0] = lab
            out[i, 1:] = img.transpose(2, 0, 1).reshape(-1)  # channel-planar
        return out

    per_batch = [len(chunk) for chunk in np.array_split(np.arange(n_train), 5)]
    for b, count in enumerate(per_batch, start=1):
        data = records(count, rng)
        data.tofile(os.path.join(data_dir, f"data_batch_{b}.bin"))
    records(n_test, rng).tofile(os.path.join(data_dir, "test_batch.bin"))


def ensure_dataset(name, data_dir, seed=0):
    """Create a synthetic corpus at data_dir if no dataset is there yet.

    Lets experiments run out of the box; real archives, when present,
    are never touched.
    """
    if name == "mnist":
        marker = os.path.join(data_dir, "train-images-idx3-ubyte")
        if not (os.path.exists(marker) or os.path.exists(marker + ".gz")):
            write_digits_idx(data_dir, seed=seed)
    elif name == "cifar10":
        if not os.path.exists(os.path.join(data_dir, "data_batch_1.bin")) and not os.path.isdir(
            os.path.join(data_dir, "cifar-10-batches-bin")
        ):
            write_cifar_batches(data_dir, seed=seed)
    else:
        raise ValueError(f"unknown dataset {name!r}")
