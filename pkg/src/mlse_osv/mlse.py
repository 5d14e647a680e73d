"""Multi-loss snapshot ensemble training, checkpoints and feature extraction."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import atomic_write_bytes, decode_container, encode_container
from .errors import DataError, ParameterError, ShapeMismatchError
from .losses import LOSS_NAMES, LossWeights, dml, loss_weights_for_trial
from .neuralcore import (
    NetworkConfig,
    NetworkState,
    OptimizerState,
    activation_pattern,
    expected_tensor_shapes,
    finite_diff_check,
    kink_free_coords,
    nesterov_step,
    network_backward,
    network_forward,
    sample_coords,
    update_running_stats,
)

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MLSE"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 48
    patience: int = 5
    max_epochs: int = 200
    n_trials: int = 6


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    dominant: str
    epochs_run: int
    accuracy: float
    weights: tuple[float, float, float]
    checkpoint: str = ""
    accuracy_trace: tuple[float, ...] = ()


@dataclass
class SnapshotSet:
    records: list[TrialRecord] = field(default_factory=list)
    states: list[NetworkState] = field(default_factory=list)

    def __len__(self):
        return len(self.states)


class EarlyStopping:
    """Stop once accuracy fails to beat its best value for ``patience`` epochs in a row."""

    def __init__(self, patience: int = 5):
        if patience < 1:
            raise ParameterError("patience must be at least 1")
        self.patience = patience
        self.best = -np.inf
        self.stale = 0

    def update(self, accuracy: float) -> bool:
        if accuracy > self.best:
            self.best = accuracy
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled mini-batches; a trailing single sample is folded into the previous batch."""
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        last = batches.pop()
        batches[-1] = np.concatenate([batches[-1], last])
    return batches


def dml_objective(state: NetworkState, images, labels, weights, rng):
    """One train-mode forward/backward under the dynamic multi-loss.

    Returns ``(loss, grads, cache)``.
    """
    heads, _, cache = network_forward(state, images, "train", rng)
    loss, head_grads = dml(labels, heads, weights)
    return loss, network_backward(state, cache, head_grads), cache


def dml_gradient_check(state: NetworkState, images, labels, weights, n_coords: int = 100, seed: int = 0, h: float = 1e-3):
    """Central-difference check of the full train-mode DML gradient in float64.

    Dropout masks and leaky-ReLU slopes are frozen by replaying the same
    random stream on every evaluation. Coordinates whose +-h step changes an
    activation pattern are skipped. Returns ``(max_rel_error, n_checked, n_skipped)``.
    """
    s64 = state.astype(np.float64)
    x64 = np.asarray(images, dtype=np.float64)
    params = s64.params

    def forward(p):
        st = NetworkState(s64.config, p, s64.bn_running_stats, s64.rng_seed)
        heads, _, cache = network_forward(st, x64, "train", np.random.default_rng(seed))
        return st, heads, cache

    def loss_fn(p):
        return dml(labels, forward(p)[1], weights)[0]

    st, heads, cache = forward(params)
    _, head_grads = dml(labels, heads, weights)
    analytic = network_backward(st, cache, head_grads)
    candidates = sample_coords(params, 4 * n_coords, np.random.default_rng(seed + 1))
    coords, skipped = kink_free_coords(lambda p: activation_pattern(forward(p)[2]), params, candidates, n_coords, h)
    return finite_diff_check(loss_fn, params, analytic, coords, h), len(coords), skipped


def predict_classes(state: NetworkState, images, head: int = 0, chunk: int = 256) -> np.ndarray:
    out = []
    for i in range(0, len(images), chunk):
        heads, _, _ = network_forward(state, images[i : i + chunk], "eval")
        out.append(heads[head].argmax(axis=1))
    return np.concatenate(out)


def identification_accuracy(state, images, labels, head: int = 0) -> float:
    return float(np.mean(predict_classes(state, images, head) == labels))


def _check_dataset(state: NetworkState, images, labels):
    if len(images) == 0:
        raise DataError("training set is empty")
    if len(images) < 2:
        raise DataError("training needs at least 2 samples for batch normalization")
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= state.config.n_classes:
        raise DataError(f"class index outside [0, {state.config.n_classes})")


def run_trial(state: NetworkState, images, labels, weights: LossWeights, hyper: TrainConfig, rng: np.random.Generator, trial_index: int = 0):
    """Train until identification accuracy stalls; mutates and returns ``state``.

    Accuracy is measured in eval mode on the training set, read from the
    head of the dominant loss.
    """
    _check_dataset(state, images, labels)
    labels = np.asarray(labels)
    opt = OptimizerState.for_state(state, hyper.learning_rate, hyper.momentum)
    head = int(np.argmax(tuple(weights)))
    stopper = EarlyStopping(hyper.patience)
    trace = []
    for epoch in range(1, hyper.max_epochs + 1):
        for idx in epoch_batches(len(images), hyper.batch_size, rng):
            _, grads, cache = dml_objective(state, images[idx], labels[idx], weights, rng)
            nesterov_step(state, opt, grads)
            update_running_stats(state, cache)
        acc = identification_accuracy(state, images, labels, head)
        trace.append(acc)
        if stopper.update(acc):
            break
    log.info("trial %d (%s): %d epochs, accuracy %.3f", trial_index, weights.dominant, len(trace), trace[-1])
    record = TrialRecord(trial_index, weights.dominant, len(trace), trace[-1], tuple(weights), accuracy_trace=tuple(trace))
    return state, record


def run_mlse(initial: NetworkState, images, labels, hyper: TrainConfig = TrainConfig(), seed: int | None = None, checkpoint_dir=None, weight_schedule=None) -> SnapshotSet:
    """Sequential trials with a rotating dominant loss, snapshotting after each.

    Every trial continues from the previous trial's final weights.
    ``weight_schedule(t)`` overrides the default rotation (used for the
    single-loss baseline).
    """
    if hyper.n_trials < 1:
        raise ParameterError("n_trials must be at least 1")
    schedule = weight_schedule or loss_weights_for_trial
    rng = np.random.default_rng(initial.rng_seed if seed is None else seed)
    state = initial.copy()
    snaps = SnapshotSet()
    for t in range(hyper.n_trials):
        state, record = run_trial(state, images, labels, schedule(t), hyper, rng, t)
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / f"snapshot_{t}.mlse"
            save_snapshot(state, path)
            record = TrialRecord(**{**record.__dict__, "checkpoint": str(path)})
        snaps.records.append(record)
        snaps.states.append(state.copy())
    return snaps


def single_loss_schedule(loss: str):
    weights = LossWeights(*(1.0 if name == loss else 0.0 for name in LOSS_NAMES))
    return lambda t: weights


# --- checkpoints ------------------------------------------------------------


def encode_snapshot(state: NetworkState) -> bytes:
    header = json.dumps({"config": state.config.to_dict(), "rng_seed": int(state.rng_seed)}, sort_keys=True, separators=(",", ":"))
    return encode_container(CHECKPOINT_MAGIC, header, state.tensors())


def save_snapshot(state: NetworkState, path):
    atomic_write_bytes(path, encode_snapshot(state))


def decode_snapshot(data: bytes) -> NetworkState:
    header, tensors = decode_container(data, CHECKPOINT_MAGIC)
    meta = json.loads(header)
    config = NetworkConfig.from_dict(meta["config"])
    expected = expected_tensor_shapes(config)
    if set(expected) != set(tensors):
        diff = sorted(set(expected) ^ set(tensors))
        raise ShapeMismatchError(f"tensor set does not match the stored config: {diff[:5]}")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise ShapeMismatchError(f"tensor {name} has shape {tensors[name].shape}, config implies {shape}")
    params = {k: v for k, v in tensors.items() if not (k.endswith(".running_mean") or k.endswith(".running_var"))}
    stats = {k: v for k, v in tensors.items() if k not in params}
    return NetworkState(config, params, stats, int(meta["rng_seed"]))


def load_snapshot(path) -> NetworkState:
    return decode_snapshot(Path(path).read_bytes())


# --- features ---------------------------------------------------------------


def extract_features(state: NetworkState, images, chunk: int = 256) -> np.ndarray:
    """Penultimate (last shared FC) activations in eval mode, shape (N, feature_width)."""
    out = []
    for i in range(0, len(images), chunk):
        _, pen, _ = network_forward(state, images[i : i + chunk], "eval")
        out.append(pen)
    if not out:
        return np.zeros((0, state.config.feature_width), np.float32)
    return np.concatenate(out).astype(np.float32, copy=False)
