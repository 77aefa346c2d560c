"""MSE training with Adam, dev-set model selection, and evaluation."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tape, Tensor, backward, reduce_sum, scale
from .data import Scaler, WindowSample, stack_windows
from .errors import ContractViolation
from .model import Model, forward_batch
from .seeding import named_rng

__all__ = [
    "AdamState",
    "TrainConfig",
    "DataSplits",
    "EpochRecord",
    "mse_loss",
    "adam_step",
    "clip_gradients",
    "train",
    "evaluate",
    "batch_predictions",
]


def mse_loss(y_hat: Tensor, y_true) -> Tensor:
    """Sum of squared errors over all coordinates of one window's output.

    Over a whole dataset the objective is simply this summed across
    windows; mini-batches use the mean so the learning rate is batch-size
    independent.
    """
    target = y_true if isinstance(y_true, Tensor) else Tensor(y_true)
    if y_hat.shape != target.shape:
        raise ContractViolation(
            f"prediction shape {y_hat.shape} != target shape {target.shape}"
        )
    diff = y_hat - target
    return reduce_sum(diff * diff)


@dataclass
class AdamState:
    """First/second moment accumulators for one named parameter set."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def ensure(self, name: str, shape: tuple[int, ...]) -> None:
        if name not in self.first_moment:
            self.first_moment[name] = np.zeros(shape)
            self.second_moment[name] = np.zeros(shape)


def adam_step(
    state: AdamState,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
) -> None:
    """One bias-corrected Adam update, in place on the parameter arrays.

    Non-finite gradients skip the update entirely (with a warning) rather
    than poisoning the moments.
    """
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ContractViolation(
                f"gradient for {name} has shape {g.shape}, "
                f"parameter has {params[name].shape}"
            )
        if not np.isfinite(g).all():
            warnings.warn(
                f"non-finite gradient for {name}; skipping update",
                RuntimeWarning,
                stacklevel=2,
            )
            return
    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1**t
    bias2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        state.ensure(name, g.shape)
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        params[name] -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients by a common factor so the global norm is at most
    `max_norm`; direction is preserved. Returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if total > max_norm > 0.0:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3
    early_stop_patience: int = 10
    seed: int = 0
    grad_clip_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ContractViolation("epochs, batch_size must be >= 1 and lr > 0")


@dataclass
class DataSplits:
    """Precomputed normalized windows per chronological split."""

    train: list[WindowSample]
    dev: list[WindowSample]
    test: list[WindowSample]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    wall_time: float


def _dataset_loss(model: Model, inputs: np.ndarray, targets: np.ndarray, batch_size: int) -> float:
    """Mean per-window summed-squared-error without recording a tape."""
    total = 0.0
    for start in range(0, inputs.shape[0], batch_size):
        block = inputs[start : start + batch_size]
        want = targets[start : start + batch_size]
        got = forward_batch(model.config, model.params, block).y_hat.data
        total += float(((got - want) ** 2).sum())
    return total / inputs.shape[0]


def train(
    model: Model,
    splits: DataSplits,
    config: TrainConfig,
) -> tuple[Model, list[EpochRecord]]:
    """Optimize the model on the train split, keeping the best-dev weights.

    Windows are shuffled each epoch from the run seed. Stops early after
    `early_stop_patience` epochs without dev improvement; a non-finite
    loss aborts immediately and the last good (best-dev) weights are
    restored either way.
    """
    if not splits.train or not splits.dev:
        raise ContractViolation("train and dev splits must be non-empty")
    train_x, train_y, _ = stack_windows(splits.train)
    dev_x, dev_y, _ = stack_windows(splits.dev)

    shuffle_rng = named_rng(config.seed, "shuffle")
    adam = AdamState(lr=config.lr)
    flat_params = {name: t.data for name, t in model.params.named()}

    best_dev = float("inf")
    best_arrays = model.params.copy_arrays()
    history: list[EpochRecord] = []
    stale_epochs = 0
    start_time = time.perf_counter()

    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(train_x.shape[0])
        epoch_loss = 0.0
        diverged = False
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            xb = train_x[batch_idx]
            yb = train_y[batch_idx]
            with Tape() as tape:
                live = model.params.attach(tape)
                y_hat = forward_batch(model.config, live, xb).y_hat
                loss = scale(mse_loss(y_hat, Tensor(yb)), 1.0 / xb.shape[0])
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                warnings.warn(
                    f"training diverged at epoch {epoch}; restoring best weights",
                    RuntimeWarning,
                    stacklevel=2,
                )
                diverged = True
                break
            epoch_loss += loss_value * xb.shape[0]
            backward(tape, loss)
            grads = {name: tape.grad(t) for name, t in live.named()}
            if config.grad_clip_norm is not None:
                clip_gradients(grads, config.grad_clip_norm)
            adam_step(adam, flat_params, grads)
        if diverged:
            break

        dev_loss = _dataset_loss(model, dev_x, dev_y, config.batch_size)
        record = EpochRecord(
            epoch=epoch,
            train_loss=epoch_loss / train_x.shape[0],
            dev_loss=dev_loss,
            wall_time=time.perf_counter() - start_time,
        )
        history.append(record)
        if dev_loss < best_dev:
            best_dev = dev_loss
            best_arrays = model.params.copy_arrays()
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= config.early_stop_patience:
                break

    model.params.load_arrays(best_arrays)
    return model, history


def batch_predictions(model: Model, samples: Sequence[WindowSample], batch_size: int = 256) -> np.ndarray:
    """Normalized next-step predictions for a list of windows."""
    inputs, _, _ = stack_windows(samples)
    chunks = []
    for start in range(0, inputs.shape[0], batch_size):
        block = inputs[start : start + batch_size]
        chunks.append(forward_batch(model.config, model.params, block).y_hat.data)
    return np.concatenate(chunks, axis=0)


def evaluate(model: Model, samples: Sequence[WindowSample]) -> dict[str, dict[str, float]]:
    """Per-series RMSE and MAE in the original (denormalized) scale."""
    if not samples:
        raise ContractViolation("evaluate needs at least one window")
    _, targets, _ = stack_windows(samples)
    predictions = batch_predictions(model, samples)
    if model.scaler is not None and isinstance(model.scaler, Scaler):
        predictions = model.scaler.invert(predictions)
        targets = model.scaler.invert(targets)
    errors = predictions - targets
    metrics: dict[str, dict[str, float]] = {}
    for d, name in enumerate(model.series_names):
        metrics[name] = {
            "rmse": float(np.sqrt(np.mean(errors[:, d] ** 2))),
            "mae": float(np.mean(np.abs(errors[:, d]))),
        }
    return metrics
