"""Focal loss, imbalance-weighted sampling, the lr schedule, and a small
mini-batch SGD loop for toy-scale runs.

Updates never mutate a parameter tree in place: each step builds a new one,
so concurrent readers of the previous parameters stay valid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, TrainingDivergedError
from .model import ReneConfig, init_rene, rene_apply, rene_grad

PT_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 60
    lr0: float = 1e-6
    decay_factor: float = 0.1
    decay_every: int = 2000
    gamma: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.decay_every < 1:
            raise InvalidInputError("batch_size, epochs, decay_every must be >= 1")
        if not 0.0 < self.decay_factor < 1.0:
            raise InvalidInputError("decay_factor must be in (0, 1)")
        if not 0.0 <= self.gamma <= 5.0:
            raise InvalidInputError("gamma must be in [0, 5]")
        if self.lr0 <= 0:
            raise InvalidInputError("lr0 must be positive")


@dataclass(frozen=True)
class LabeledDataset:
    """(features, label) pairs plus per-class tallies."""

    items: tuple
    class_counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.class_counts, dtype=np.int64)
        tally = np.zeros_like(counts)
        for _, label in self.items:
            if not 0 <= label < len(counts):
                raise InvalidInputError(f"label {label} outside [0, {len(counts)})")
            tally[label] += 1
        if not np.array_equal(tally, counts):
            raise InvalidInputError("class_counts disagree with item labels")
        object.__setattr__(self, "items", tuple(self.items))
        object.__setattr__(self, "class_counts", counts)

    @classmethod
    def from_pairs(cls, pairs, n_classes: int) -> "LabeledDataset":
        counts = np.zeros(n_classes, dtype=np.int64)
        for _, label in pairs:
            if not 0 <= label < n_classes:
                raise InvalidInputError(f"label {label} outside [0, {n_classes})")
            counts[label] += 1
        return cls(items=tuple(pairs), class_counts=counts)

    @property
    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.items], dtype=np.int64)


# --------------------------------------------------------------------- losses

def focal_loss(probs, target: int, gamma: float) -> float:
    """-(1 - p_t)^gamma * log(p_t), with p_t floored at 1e-12 inside the log."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= target < probs.shape[0]:
        raise InvalidInputError(f"target {target} outside [0, {probs.shape[0]})")
    if not 0.0 <= gamma <= 5.0:
        raise InvalidInputError("gamma must be in [0, 5]")
    p_t = float(probs[target])
    return -((1.0 - p_t) ** gamma) * math.log(max(p_t, PT_FLOOR))


def cross_entropy(probs, target: int) -> float:
    return focal_loss(probs, target, 0.0)


def focal_loss_grad(probs, target: int, gamma: float) -> np.ndarray:
    """Gradient of the focal loss w.r.t. the logits behind `probs`."""
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= target < p.shape[0]:
        raise InvalidInputError(f"target {target} outside [0, {p.shape[0]})")
    p_t = float(p[target])
    log_pt = math.log(max(p_t, PT_FLOOR))
    one_minus = max(1.0 - p_t, 0.0)
    if gamma == 0.0 or one_minus == 0.0:
        modulating = 0.0
    else:
        modulating = gamma * one_minus ** (gamma - 1.0) * log_pt
    dl_dpt = modulating - one_minus**gamma / max(p_t, PT_FLOOR)
    onehot = np.zeros_like(p)
    onehot[target] = 1.0
    return dl_dpt * p_t * (onehot - p)


# -------------------------------------------------------------------- sampler

def weighted_sampler_weights(class_counts) -> np.ndarray:
    """Per-class item weight, 1/(n_present * count); items of class c drawn
    with weight w[c], so every present class has equal total draw probability."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.sum() <= 0:
        raise InvalidInputError("empty dataset")
    present = counts > 0
    weights = np.zeros_like(counts)
    weights[present] = 1.0 / (present.sum() * counts[present])
    return weights


def item_sampling_weights(dataset: LabeledDataset) -> np.ndarray:
    return weighted_sampler_weights(dataset.class_counts)[dataset.labels]


# ------------------------------------------------------------------- schedule

def lr_at_step(step: int, cfg: TrainConfig) -> float:
    if step < 0:
        raise InvalidInputError("step must be >= 0")
    return cfg.lr0 * cfg.decay_factor ** (step // cfg.decay_every)


# ------------------------------------------------------------------ tree math

def _tree_zeros_like(tree):
    return {k: _tree_zeros_like(v) if isinstance(v, dict) else np.zeros_like(v)
            for k, v in tree.items()}


def _tree_add_(acc, tree):
    for k, v in tree.items():
        if isinstance(v, dict):
            _tree_add_(acc[k], v)
        else:
            acc[k] += v


def sgd_step(params, grads, lr: float):
    """New parameter tree: params - lr * grads."""
    return {
        k: sgd_step(v, grads[k], lr) if isinstance(v, dict) else v - lr * grads[k]
        for k, v in params.items()
    }


# -------------------------------------------------------------- training loop

def train_toy(
    dataset: LabeledDataset,
    model_cfg: ReneConfig,
    train_cfg: TrainConfig,
    trace_path=None,
    n_mels: int = 80,
):
    """Mini-batch SGD with focal loss, replacement sampling weighted for class
    balance, and the step-decay schedule. Returns (params, trace) where trace
    rows are (epoch, mean_loss, lr of the epoch's last update).
    """
    if not dataset.items:
        raise InvalidInputError("dataset is empty")
    params = init_rene(model_cfg, train_cfg.seed, n_mels)
    rng = np.random.default_rng(train_cfg.seed)
    weights = item_sampling_weights(dataset)
    n_items = len(dataset.items)
    batches_per_epoch = -(-n_items // train_cfg.batch_size)

    step = 0
    trace = []
    for epoch in range(train_cfg.epochs):
        epoch_losses = []
        lr = train_cfg.lr0
        for _ in range(batches_per_epoch):
            chosen = rng.choice(n_items, size=train_cfg.batch_size,
                                replace=True, p=weights)
            grads = _tree_zeros_like(params)
            batch_loss = 0.0
            for idx in chosen:
                frames, label = dataset.items[idx]
                out, cache = rene_apply(frames, params, model_cfg)
                batch_loss += focal_loss(out.probs, label, train_cfg.gamma)
                dlogits = focal_loss_grad(out.probs, label, train_cfg.gamma)
                _tree_add_(grads, rene_grad(dlogits, cache, params, model_cfg))
            batch_loss /= train_cfg.batch_size
            if not math.isfinite(batch_loss):
                raise TrainingDivergedError(step)
            lr = lr_at_step(step, train_cfg)
            params = sgd_step(params, grads, lr / train_cfg.batch_size)
            epoch_losses.append(batch_loss)
            step += 1
        trace.append((epoch, float(np.mean(epoch_losses)), lr))

    if trace_path is not None:
        write_loss_trace(trace_path, trace)
    return params, trace


def write_loss_trace(path, trace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "lr"])
        for epoch, mean_loss, lr in trace:
            writer.writerow([epoch, f"{mean_loss:.10g}", f"{lr:.10g}"])


def training_accuracy(dataset: LabeledDataset, params, model_cfg: ReneConfig) -> float:
    hits = 0
    for frames, label in dataset.items:
        out, _ = rene_apply(frames, params, model_cfg)
        hits += int(np.argmax(out.probs) == label)
    return hits / len(dataset.items)
