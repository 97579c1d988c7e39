"""Experiment driver: configuration, the validation-driven learning-rate
schedule, multi-seed runs, and CSV metric emission.

A fixed (config, seed) pair determines every emitted byte. Both
aggregators consume identical splits, identical client selections, and
identical per-client training streams for a given seed, so accuracy
deltas between them isolate the aggregation rule.
"""

import dataclasses
import os
import sys
import time
from dataclasses import dataclass

import numpy as np
import yaml

from . import datagen
from .attack import AttackConfig, adfl_round, dump_adversarial_batches
from .data import SkewConfig, label_presence_counts, load_dataset, make_split
from .nn import init_params, make_arch
from .protocol import (
    ClientConfig,
    evaluate,
    fedavg,
    select_clients,
    train_selected,
    uniform_weights,
)
from .rng import STREAM_ROUND, seed_key

AGGREGATORS = ("fedavg", "adfl")

# Presence-draw probabilities used in the desk-scale digit experiment
# (labels 3-5 common, 0/8/9 rare).
DEFAULT_LABEL_PROBS = (0.035, 0.045, 0.10, 0.21, 0.21, 0.20, 0.10, 0.045, 0.035, 0.02)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "mnist"
    data_dir: str = "data/mnist"
    aggregator: str = "fedavg"
    rounds: int = 40
    pool_size: int = 30
    clients_per_round: int = 5
    label_probs: tuple = DEFAULT_LABEL_PROBS
    labels_per_client: int = 3
    samples_per_client: int = 600
    local_epochs: int = 5
    batch_size: int = 32
    base_lr: float = 0.2
    epsilon: float = 0.05
    attack_iterations: int = 10
    start_mode: str = "noise"
    n_validation: int = 3
    test_size: int = 1000
    seeds: tuple = (1, 2, 3, 4, 5)
    output_dir: str = "results"
    arch: str = ""  # empty -> default for the dataset
    force_uniform_weights: bool = False
    dump_adv_images: bool = False
    synthesize_missing_data: bool = True

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")
        if self.clients_per_round > self.pool_size:
            raise ValueError("clients_per_round exceeds pool_size")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    def arch_name(self) -> str:
        if self.arch:
            return self.arch
        return {"mnist": "mnist_mlp", "cifar10": "cifar_cnn"}[self.dataset]

    def skew_config(self) -> SkewConfig:
        return SkewConfig(
            label_probs=tuple(self.label_probs),
            labels_per_client=self.labels_per_client,
            num_clients=self.pool_size,
            samples_per_client=self.samples_per_client,
        )

    def client_config(self, lr: float) -> ClientConfig:
        return ClientConfig(
            local_epochs=self.local_epochs, batch_size=self.batch_size, lr=lr
        )

    def attack_config(self) -> AttackConfig:
        return AttackConfig(
            epsilon=self.epsilon,
            iterations=self.attack_iterations,
            start_mode=self.start_mode,
        )


_LIST_KEYS = {"label_probs", "seeds"}
_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def config_from_dict(values: dict) -> ExperimentConfig:
    kwargs = {}
    for key, value in values.items():
        if key not in _CONFIG_FIELDS:
            raise ValueError(f"unknown config key: {key!r}")
        if key in _LIST_KEYS:
            value = tuple(value)
        kwargs[key] = value
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    """Flat YAML file with keys matching ExperimentConfig fields."""
    with open(path) as f:
        values = yaml.safe_load(f) or {}
    if not isinstance(values, dict):
        raise ValueError(f"{path}: expected a mapping of config keys")
    return config_from_dict(values)


# ---------------------------------------------------------------------------
# Learning-rate schedule


def lr_schedule(base_lr: float, round_index: int, validation_loss_history) -> float:
    """base_lr / sqrt(1 + d).

    With validation clients, d counts past rounds whose mean validation
    loss failed to improve on the best seen so far. Without them
    (history is None), d is simply the round index: pure decay.
    """
    if validation_loss_history is None:
        d = round_index
    else:
        best = np.inf
        d = 0
        for loss in validation_loss_history:
            if loss < best:
                best = loss
            else:
                d += 1
    return base_lr / np.sqrt(1.0 + d)


# ---------------------------------------------------------------------------
# Experiment loop


@dataclass
class RoundMetrics:
    round_index: int
    iid_accuracy: float
    per_class_accuracy: np.ndarray
    mean_validation_loss: float  # nan when there are no validation clients
    lr_used: float
    client_weights: np.ndarray  # weights actually used (uniform for fedavg)
    wall_time: float


@dataclass
class SeedResult:
    seed: int
    rounds: list
    label_presence: np.ndarray  # per-label count of training shards holding it


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    seed_results: list

    def final_iid_accuracies(self) -> np.ndarray:
        return np.array([sr.rounds[-1].iid_accuracy for sr in self.seed_results])

    def final_per_class(self) -> np.ndarray:
        """(num_seeds, C) final-round per-class accuracies."""
        return np.stack([sr.rounds[-1].per_class_accuracy for sr in self.seed_results])


def run_seed(cfg: ExperimentConfig, train_data, test_data, seed: int, progress=False) -> SeedResult:
    split = make_split(
        train_data, test_data, cfg.skew_config(), cfg.n_validation, cfg.test_size, seed
    )
    arch = make_arch(cfg.arch_name())
    global_params = init_params(arch, seed)
    attack_cfg = cfg.attack_config()
    val_history = [] if cfg.n_validation > 0 else None

    rounds = []
    for r in range(cfg.rounds):
        t0 = time.perf_counter()
        lr = lr_schedule(cfg.base_lr, r, val_history)
        plan = select_clients(cfg.pool_size, cfg.clients_per_round, seed, r, lr)
        shards = [split.train_shards[i] for i in plan.selected_client_ids]
        round_seed = seed_key(seed, STREAM_ROUND, r)
        client_cfg = cfg.client_config(lr)

        if cfg.aggregator == "fedavg":
            updates = train_selected(global_params, shards, client_cfg, round_seed)
            global_params = fedavg(updates)
            weights = uniform_weights(len(shards))
        else:
            result = adfl_round(
                global_params,
                shards,
                client_cfg,
                attack_cfg,
                round_seed,
                force_uniform=cfg.force_uniform_weights,
            )
            global_params = result.new_global
            weights = result.weights
            if cfg.dump_adv_images:
                dump_adversarial_batches(
                    os.path.join(cfg.output_dir, "adv_images"), r, result.batches
                )

        ev = evaluate(global_params, split.iid_test)
        if cfg.n_validation > 0:
            val_loss = float(
                np.mean(
                    [evaluate(global_params, s.dataset).mean_loss for s in split.validation_shards]
                )
            )
            val_history.append(val_loss)
        else:
            val_loss = float("nan")

        rounds.append(
            RoundMetrics(
                round_index=r,
                iid_accuracy=ev.accuracy,
                per_class_accuracy=ev.per_class_accuracy,
                mean_validation_loss=val_loss,
                lr_used=lr,
                client_weights=weights,
                wall_time=time.perf_counter() - t0,
            )
        )
        if progress:
            print(
                f"  seed {seed} round {r + 1}/{cfg.rounds}: "
                f"iid_acc={ev.accuracy:.4f} lr={lr:.4f}",
                file=sys.stderr,
            )
    presence = label_presence_counts(split.train_shards, len(cfg.label_probs))
    return SeedResult(seed=seed, rounds=rounds, label_presence=presence)


def run_experiment(cfg: ExperimentConfig, progress=False) -> ExperimentResult:
    """Run every seed with the configured aggregator. Deterministic:
    the returned metrics are a pure function of (cfg, seeds)."""
    if cfg.synthesize_missing_data:
        datagen.ensure_dataset(cfg.dataset, cfg.data_dir)
    train_data, test_data = load_dataset(cfg.dataset, cfg.data_dir)
    seed_results = []
    for seed in cfg.seeds:
        if progress:
            print(f"[{cfg.aggregator}] seed {seed}", file=sys.stderr)
        seed_results.append(run_seed(cfg, train_data, test_data, seed, progress))
    return ExperimentResult(config=cfg, seed_results=seed_results)


# ---------------------------------------------------------------------------
# Metric emission


def _fmt(value) -> str:
    return f"{float(value):.9g}"


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(row) + "\n")


def emit_metrics(result: ExperimentResult, out_dir) -> list:
    """Write one CSV per seed, a mean/std summary CSV, and the
    label-presence histogram CSV. Returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    cfg = result.config
    num_classes = len(cfg.label_probs)
    k = cfg.clients_per_round
    paths = []

    header = (
        ["round", "iid_accuracy"]
        + [f"acc_class_{c}" for c in range(num_classes)]
        + ["val_loss", "lr"]
        + [f"w_{i}" for i in range(k)]
    )
    for sr in result.seed_results:
        rows = []
        for m in sr.rounds:
            rows.append(
                [str(m.round_index), _fmt(m.iid_accuracy)]
                + [_fmt(a) for a in m.per_class_accuracy]
                + [_fmt(m.mean_validation_loss), _fmt(m.lr_used)]
                + [_fmt(w) for w in m.client_weights]
            )
        path = os.path.join(out_dir, f"{cfg.aggregator}_seed_{sr.seed}.csv")
        _write_rows(path, header, rows)
        paths.append(path)

    # Summary: mean/std across seeds, per round.
    summary_header = ["round"]
    for name in ["iid_accuracy"] + [f"acc_class_{c}" for c in range(num_classes)] + ["val_loss"]:
        summary_header += [f"{name}_mean", f"{name}_std"]
    rows = []
    for r in range(cfg.rounds):
        per_seed = [sr.rounds[r] for sr in result.seed_results]
        row = [str(r)]
        series = [np.array([m.iid_accuracy for m in per_seed])]
        series += [
            np.array([m.per_class_accuracy[c] for m in per_seed]) for c in range(num_classes)
        ]
        series += [np.array([m.mean_validation_loss for m in per_seed])]
        for values in series:
            row += [_fmt(values.mean()), _fmt(values.std())]
        rows.append(row)
    summary_path = os.path.join(out_dir, f"{cfg.aggregator}_summary.csv")
    _write_rows(summary_path, summary_header, rows)
    paths.append(summary_path)

    presence_header = ["label"] + [f"seed_{sr.seed}" for sr in result.seed_results] + ["mean"]
    rows = []
    for c in range(num_classes):
        counts = [sr.label_presence[c] for sr in result.seed_results]
        rows.append([str(c)] + [str(int(v)) for v in counts] + [_fmt(np.mean(counts))])
    presence_path = os.path.join(out_dir, "label_presence.csv")
    _write_rows(presence_path, presence_header, rows)
    paths.append(presence_path)
    return paths
