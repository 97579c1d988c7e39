"""Client-side local training and server-side aggregation.

Local trainings within a round are independent: each gets its own
derived seed, so results do not depend on execution order. Aggregation
is an elementwise convex combination of returned parameter sets; plain
federated averaging is the uniform-weight special case (and is computed
through the same code path, so forcing uniform weights reproduces it
bit for bit).
"""

from dataclasses import dataclass

import numpy as np

from .data import ClientShard, LabeledDataset
from .nn import ModelParams, _forward_cached, loss_and_grads, sgd_step
from .rng import STREAM_SELECT, STREAM_TRAIN, child_rng, seed_key


@dataclass(frozen=True)
class ClientConfig:
    local_epochs: int = 5
    batch_size: int = 32
    lr: float = 0.1

    def __post_init__(self):
        if self.local_epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ValueError(f"invalid client config: {self}")


@dataclass
class RoundPlan:
    round_index: int
    selected_client_ids: list
    lr_for_round: float


def select_clients(pool_size: int, k: int, seed, round_index: int, lr_for_round: float = 0.0) -> RoundPlan:
    """K distinct clients, uniform without replacement, deterministic
    per (seed, round_index)."""
    if k > pool_size:
        raise ValueError(f"cannot select {k} clients from a pool of {pool_size}")
    rng = child_rng(seed, STREAM_SELECT, round_index)
    ids = [int(i) for i in rng.choice(pool_size, size=k, replace=False)]
    return RoundPlan(round_index=round_index, selected_client_ids=ids, lr_for_round=lr_for_round)


def local_train(global_params: ModelParams, shard: ClientShard, cfg: ClientConfig, seed) -> ModelParams:
    """Mini-batch SGD on the shard, starting from a copy of the global
    model. The batch order is reshuffled every epoch from `seed`; the
    final short batch is used. The input params are never mutated."""
    n = len(shard.dataset)
    if n == 0:
        raise ValueError(f"client {shard.client_id}: empty shard")
    rng = child_rng(seed)
    params = global_params.copy()
    images, labels = shard.dataset.images, shard.dataset.labels
    for _ in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            grads = loss_and_grads(params, images[batch], labels[batch])
            params = sgd_step(params, grads, cfg.lr)
    return params


def train_selected(global_params: ModelParams, shards, cfg: ClientConfig, seed) -> list:
    """Local training for every selected shard, one derived stream per
    client id. Shared by the plain and the weighted aggregation paths so
    paired comparisons consume identical randomness."""
    return [
        local_train(global_params, shard, cfg, seed_key(seed, STREAM_TRAIN, shard.client_id))
        for shard in shards
    ]


def uniform_weights(k: int) -> np.ndarray:
    return np.full(k, 1.0 / k)


def wfedavg(updates, weights) -> ModelParams:
    """Elementwise convex combination of same-architecture parameter sets."""
    if not updates:
        raise ValueError("no updates to aggregate")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(updates),):
        raise ValueError(f"{len(updates)} updates but {weights.shape} weights")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-6:
        raise ValueError(f"weights must be nonnegative and sum to 1, got {weights}")
    first = updates[0]
    for other in updates[1:]:
        if other.arch != first.arch:
            raise ValueError("architecture mismatch across updates")
    layers = []
    for pos in range(len(first.layers)):
        acc = weights[0] * updates[0].layers[pos]
        for i in range(1, len(updates)):
            acc += weights[i] * updates[i].layers[pos]
        layers.append(acc)
    return ModelParams(first.arch, layers)


def fedavg(updates) -> ModelParams:
    """Arithmetic mean of the updates: uniform-weight aggregation."""
    return wfedavg(updates, uniform_weights(len(updates)))


@dataclass
class EvalResult:
    accuracy: float
    per_class_accuracy: np.ndarray  # (C,), nan for classes absent from the data
    mean_loss: float


def evaluate(params: ModelParams, dataset: LabeledDataset, batch_size: int = 512) -> EvalResult:
    """Top-1 accuracy, per-class accuracy, and mean cross-entropy."""
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    num_classes = params.arch.num_classes
    correct = np.zeros(n, dtype=bool)
    losses = np.zeros(n)
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        xb = dataset.images[start:stop]
        yb = dataset.labels[start:stop]
        logits, _ = _forward_cached(params, xb)
        zmax = logits.max(axis=1)
        losses[start:stop] = (
            zmax
            + np.log(np.exp(logits - zmax[:, None]).sum(axis=1))
            - logits[np.arange(len(yb)), yb]
        )
        correct[start:stop] = np.argmax(logits, axis=1) == yb
    per_class = np.full(num_classes, np.nan)
    for c in range(num_classes):
        mask = dataset.labels == c
        if mask.any():
            per_class[c] = float(correct[mask].mean())
    return EvalResult(
        accuracy=float(correct.mean()),
        per_class_accuracy=per_class,
        mean_loss=float(losses.mean()),
    )
