"""Server-side adversarial weighting of client updates.

After local training, the server holds every client's returned model. It
synthesizes one targeted adversarial image per (client, label) with
iterative sign-gradient descent, has every model classify every image,
and scores each client on two abilities: recognizing images produced by
the other models, and producing images the other models recognize.
Normalized scores become the aggregation weights.

The attack is targeted: each step moves the image against the gradient
of the cross-entropy toward the target label, then clips back into the
pixel range. Self-predictions (a model classifying its own images) are
recorded in the cross-prediction matrix but excluded from both scores.
"""

import os
from dataclasses import dataclass

import numpy as np

from .nn import ModelParams, forward, loss_and_grads, softmax_probs
from .protocol import train_selected, uniform_weights, wfedavg
from .rng import STREAM_ATTACK, child_rng, seed_key

START_MODES = ("noise", "black", "white")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.05  # per-step perturbation magnitude
    iterations: int = 10
    start_mode: str = "noise"
    clip_lo: float = 0.0
    clip_hi: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.start_mode not in START_MODES:
            raise ValueError(f"start_mode must be one of {START_MODES}")
        if not self.clip_lo < self.clip_hi:
            raise ValueError("empty clip range")


@dataclass
class AdversarialBatch:
    producer_client_id: int
    images: np.ndarray  # (C, *input_shape), one image per target label


@dataclass
class CrossPredictionMatrix:
    """All-pairs verdicts, indexed [predictor, producer, label].

    `probability` is the softmax mass the predictor assigns to the
    target label itself (well defined whether or not the prediction
    was correct)."""

    correct: np.ndarray  # (K, K, C) bool
    probability: np.ndarray  # (K, K, C) float

    @property
    def num_clients(self) -> int:
        return self.correct.shape[0]

    @property
    def num_classes(self) -> int:
        return self.correct.shape[2]


def _start_image(shape, cfg: AttackConfig, rng) -> np.ndarray:
    if cfg.start_mode == "black":
        return np.full(shape, cfg.clip_lo)
    if cfg.start_mode == "white":
        return np.full(shape, cfg.clip_hi)
    return rng.uniform(cfg.clip_lo, cfg.clip_hi, size=shape)


def create_adversarial_image(params: ModelParams, target: int, cfg: AttackConfig, seed) -> np.ndarray:
    """Synthesize one image the model classifies as `target`.

    x <- clip(x - epsilon * sign(grad_x loss(params, x, target))) for
    exactly cfg.iterations steps, starting per cfg.start_mode. Pure
    function of (params, target, cfg, seed).
    """
    num_classes = params.arch.num_classes
    if not 0 <= target < num_classes:
        raise ValueError(f"target {target} out of range [0, {num_classes})")
    rng = child_rng(seed, target)
    x = _start_image(tuple(params.arch.input_shape), cfg, rng)
    for _ in range(cfg.iterations):
        grad = loss_and_grads(params, x, target, want_input_grad=True).input_grad
        x = np.clip(x - cfg.epsilon * np.sign(grad), cfg.clip_lo, cfg.clip_hi)
    return x


def create_adversarial_batch(
    params: ModelParams, cfg: AttackConfig, seed, producer_client_id: int = -1
) -> AdversarialBatch:
    """All C per-label images in one batched attack.

    Bitwise identical to C independent create_adversarial_image calls
    with the same seed: start images come from per-target streams and
    the batched gradient only rescales each per-sample gradient by a
    positive constant, which the sign step ignores.
    """
    num_classes = params.arch.num_classes
    targets = np.arange(num_classes)
    x = np.stack(
        [
            _start_image(tuple(params.arch.input_shape), cfg, child_rng(seed, c))
            for c in targets
        ]
    )
    for _ in range(cfg.iterations):
        grad = loss_and_grads(params, x, targets, want_input_grad=True).input_grad
        x = np.clip(x - cfg.epsilon * np.sign(grad), cfg.clip_lo, cfg.clip_hi)
    return AdversarialBatch(producer_client_id=producer_client_id, images=x)


def cross_predict(models, batches) -> CrossPredictionMatrix:
    """Every model classifies every producer's per-label images."""
    k = len(models)
    if len(batches) != k:
        raise ValueError(f"{k} models but {len(batches)} batches")
    num_classes = models[0].arch.num_classes
    stacked = np.concatenate([b.images for b in batches])  # (K*C, ...)
    correct = np.zeros((k, k, num_classes), dtype=bool)
    probability = np.zeros((k, k, num_classes))
    for pred in range(k):
        probs = softmax_probs(forward(models[pred], stacked))  # (K*C, C)
        by_producer = probs.reshape(k, num_classes, num_classes)
        labels = np.arange(num_classes)
        correct[pred] = by_producer.argmax(axis=2) == labels
        probability[pred] = by_producer[:, labels, labels]
    return CrossPredictionMatrix(correct=correct, probability=probability)


def predicted_others_score(matrix: CrossPredictionMatrix, k: int) -> float:
    """How well client k's model recognizes the other producers'
    adversarial images; its own images are excluded."""
    hits = matrix.correct[k] * matrix.probability[k]  # (K, C) over producers
    return float(hits.sum() - hits[k].sum())


def was_predicted_score(matrix: CrossPredictionMatrix, k: int) -> float:
    """How well the other models recognize client k's adversarial
    images; k predicting itself is excluded."""
    hits = matrix.correct[:, k] * matrix.probability[:, k]  # (K, C) over predictors
    return float(hits.sum() - hits[k].sum())


def compute_weights(matrix: CrossPredictionMatrix) -> np.ndarray:
    """Per-client totals (predicted-others + was-predicted), normalized
    to the simplex. All-zero totals fall back to uniform weights, which
    recovers plain averaging."""
    k = matrix.num_clients
    totals = np.array(
        [predicted_others_score(matrix, i) + was_predicted_score(matrix, i) for i in range(k)]
    )
    s = totals.sum()
    if s <= 0.0:
        return uniform_weights(k)
    return totals / s


@dataclass
class AdflRoundResult:
    new_global: ModelParams
    weights: np.ndarray
    batches: list  # list[AdversarialBatch], producer order == shard order
    matrix: CrossPredictionMatrix


def adfl_round(
    global_params: ModelParams,
    shards,
    client_cfg,
    attack_cfg: AttackConfig,
    seed,
    force_uniform: bool = False,
) -> AdflRoundResult:
    """One full server round: local training, per-client adversarial
    batches, all-pairs cross-prediction, weight computation, weighted
    aggregation.

    `force_uniform` overrides the computed weights with 1/K (the full
    pipeline still runs), which makes the round identical to a plain
    averaging round.
    """
    updates = train_selected(global_params, shards, client_cfg, seed)
    batches = [
        create_adversarial_batch(
            update,
            attack_cfg,
            seed_key(seed, STREAM_ATTACK, shard.client_id),
            producer_client_id=shard.client_id,
        )
        for update, shard in zip(updates, shards)
    ]
    matrix = cross_predict(updates, batches)
    weights = uniform_weights(len(updates)) if force_uniform else compute_weights(matrix)
    return AdflRoundResult(
        new_global=wfedavg(updates, weights),
        weights=weights,
        batches=batches,
        matrix=matrix,
    )


# ---------------------------------------------------------------------------
# Image dumps (binary portable pixmaps)


def write_pnm(path, image: np.ndarray):
    """Write one [0,1] image as binary P5 (single channel) or P6 (RGB)."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, 1|3) image, got {img.shape}")
    h, w, channels = img.shape
    bytes_ = np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    magic = b"P5" if channels == 1 else b"P6"
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(bytes_.tobytes())


def dump_adversarial_batches(out_dir, round_index: int, batches) -> list:
    """One pixmap per (client, label): round_<r>_client_<k>_label_<c>."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for batch in batches:
        channels = batch.images.shape[-1]
        ext = "pgm" if channels == 1 else "ppm"
        for c in range(batch.images.shape[0]):
            name = f"round_{round_index}_client_{batch.producer_client_id}_label_{c}.{ext}"
            path = os.path.join(out_dir, name)
            write_pnm(path, batch.images[c])
            paths.append(path)
    return paths
