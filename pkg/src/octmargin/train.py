"""Minibatch SGD with momentum, the staged learning-rate schedule, and the
epoch loop that wires the regularizers into every step."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import slicesampler
from .errors import TrainingDivergedError
from .network import (
    ArchitectureSpec,
    NetworkParams,
    default_architecture,
    forward,
    init_params,
    labels_to_onehot,
    predict_labels,
    zeros_like_params,
)
from .regularizers import (
    RegularizerConfig,
    make_sampler_state,
    regularized_gradient,
    slice_sample,
)
from .rng import seed_stream


def default_schedule(epochs: int = 45):
    """Staged learning rates 0.05 / 0.005 / 0.0005 in a 30:10:5 epoch split.

    For other epoch counts the stage lengths scale proportionally (each stage
    keeps at least one epoch once epochs >= 3).
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if epochs == 1:
        return ((1, 1, 0.05),)
    if epochs == 2:
        return ((1, 1, 0.05), (2, 2, 0.005))
    n1 = max(1, round(epochs * 30 / 45))
    n2 = max(1, round(epochs * 10 / 45))
    if n1 + n2 >= epochs:
        n2 = max(1, epochs - n1 - 1)
        if n1 + n2 >= epochs:
            n1, n2 = epochs - 2, 1
    return (
        (1, n1, 0.05),
        (n1 + 1, n1 + n2, 0.005),
        (n1 + n2 + 1, epochs, 0.0005),
    )


@dataclass
class TrainConfig:
    """Epoch count, schedule, momentum, batch size and the root seed."""

    epochs: int = 45
    batch_size: int = 100
    momentum: float = 0.95
    seed: int = 0
    schedule: tuple = None  # ((first_epoch, last_epoch, lr), ...), 1-based inclusive

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0,1)")
        if self.schedule is None:
            self.schedule = default_schedule(self.epochs)
        segs = sorted(self.schedule)
        cursor = 1
        for first, last, lr in segs:
            if first != cursor or last < first:
                raise ValueError(f"schedule has a gap or overlap at epoch {cursor}")
            if lr <= 0:
                raise ValueError("learning rates must be positive")
            cursor = last + 1
        if cursor != self.epochs + 1:
            raise ValueError("schedule must cover exactly epochs 1..epochs")


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    if not 1 <= epoch <= config.epochs:
        raise ValueError(f"epoch {epoch} outside 1..{config.epochs}")
    for first, last, lr in config.schedule:
        if first <= epoch <= last:
            return lr
    raise AssertionError("validated schedule cannot miss an epoch")


def sgd_step(
    params: NetworkParams,
    grads: dict,
    velocity: dict,
    lr: float,
    momentum: float,
):
    """v <- momentum*v - lr*g; W <- W + v, in place on params and velocity."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for name, tensor in params.tensors():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(None, None, f"non-finite gradient in {name}")
        v = velocity[name]
        v *= momentum
        v -= lr * g
        tensor += v


@dataclass
class TrainLog:
    """Per-epoch trace: mean data loss, full-pass top-1 error, penalty, lr."""

    losses: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    penalties: list = field(default_factory=list)
    rates: list = field(default_factory=list)


def top1_error(params: NetworkParams, x: np.ndarray, labels: np.ndarray, batch: int = 256):
    wrong = 0
    for i in range(0, len(x), batch):
        logits, _ = forward(params, x[i : i + batch], mode="eval")
        wrong += int(np.sum(predict_labels(logits) != labels[i : i + batch]))
    return wrong / len(x)


def train(
    x: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig,
    reg: RegularizerConfig,
    arch: Optional[ArchitectureSpec] = None,
    progress=None,
):
    """Train a fresh network; returns (params, TrainLog).

    Deterministic given config.seed: initialization, shuffling, dropout and
    the slice sampler each draw from their own named stream.  fn_ss chains
    persist across epochs and the sample set is refreshed once per epoch.
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    if len(x) == 0:
        raise ValueError("training set is empty")
    if len(x) != len(labels):
        raise ValueError("inputs and labels disagree in length")
    if arch is None:
        arch = default_architecture()
    onehot = labels_to_onehot(labels)

    params = init_params(arch, seed_stream(config.seed, "init"))
    velocity = zeros_like_params(params)
    shuffle_rng = seed_stream(config.seed, "shuffle")
    dropout_rng = seed_stream(config.seed, "dropout")
    sampler_rng = seed_stream(config.seed, "sampler")

    sampler_state: Optional[slicesampler.SliceSamplerState] = None
    reg_cursor = 0
    log = TrainLog()
    n = len(x)

    for epoch in range(1, config.epochs + 1):
        lr = lr_at_epoch(config, epoch)

        epoch_reg = None
        if reg.method == "fn_dd" and reg.lam > 0:
            epoch_reg = reg.reg_set
        elif reg.method == "fn_ss" and reg.lam > 0:
            if sampler_state is None:
                sampler_state = make_sampler_state(params, reg, sampler_rng)
            epoch_reg = slice_sample(params, sampler_state, reg.sample_count)

        order = shuffle_rng.permutation(n)
        losses, penalties = [], []
        for step, start in enumerate(range(0, n, config.batch_size), start=1):
            idx = order[start : start + config.batch_size]
            reg_batch = None
            if epoch_reg is not None:
                take = min(len(idx), len(epoch_reg))
                rows = (reg_cursor + np.arange(take)) % len(epoch_reg)
                reg_batch = epoch_reg[rows]
                reg_cursor = (reg_cursor + take) % len(epoch_reg)
            try:
                grads, data_loss, omega = regularized_gradient(
                    reg, params, x[idx], onehot[idx], reg_batch=reg_batch, dropout_rng=dropout_rng
                )
                if not np.isfinite(data_loss):
                    raise TrainingDivergedError(epoch, step, "non-finite loss")
                sgd_step(params, grads, velocity, lr, config.momentum)
            except TrainingDivergedError as e:
                raise TrainingDivergedError(epoch, step, e.message) from None
            losses.append(data_loss)
            penalties.append(omega)

        if not params.all_finite():
            raise TrainingDivergedError(epoch, len(losses), "non-finite parameters")
        log.losses.append(float(np.mean(losses)))
        log.penalties.append(float(np.mean(penalties)))
        log.errors.append(top1_error(params, x, labels))
        log.rates.append(lr)
        if progress is not None:
            progress(epoch, log)

    return params, log
