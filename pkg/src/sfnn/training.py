"""Mini-batch Adam training with validation-based early stopping."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import NormalizedDataset, WindowBatch, make_windows, split_chronological
from .errors import NonFiniteLoss, ShapeMismatch
from .model import SFNNConfig, SFNNParams, backward, forward_batch, init_params
from .numerics import SeededRng

EVAL_CHUNK = 256


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; every field is recorded in run reports."""

    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if not 1 <= self.patience <= self.max_epochs:
            raise ValueError("patience must be in [1, max_epochs]")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must be in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be > 0")

    def snapshot(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "seed": self.seed,
        }


@dataclass
class OptimizerState:
    """Adam moment accumulators, one pair per parameter tensor."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: SFNNParams) -> "OptimizerState":
        return cls(
            m={name: np.zeros_like(t) for name, t in params.named_tensors()},
            v={name: np.zeros_like(t) for name, t in params.named_tensors()},
        )


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over every element, plus its gradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    loss = float((diff**2).mean())
    grad = 2.0 * diff / diff.size
    return loss, grad


def adam_step(
    params: SFNNParams,
    grads: SFNNParams,
    state: OptimizerState,
    config: TrainConfig,
):
    """One bias-corrected Adam update, applied in place."""
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    correct1 = 1.0 - b1**state.step
    correct2 = 1.0 - b2**state.step
    lr = config.learning_rate
    for (name, tensor), (_, grad) in zip(params.named_tensors(), grads.named_tensors()):
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        tensor -= lr * (m / correct1) / (np.sqrt(v / correct2) + config.adam_eps)
    return params, state


def evaluate(params: SFNNParams, config: SFNNConfig, windows: WindowBatch) -> float:
    """Mean squared error over every window, computed in normalized space."""
    total = 0.0
    count = 0
    for start in range(0, len(windows), EVAL_CHUNK):
        idx = np.arange(start, min(start + EVAL_CHUNK, len(windows)))
        x, y = windows.gather(idx)
        pred, _ = forward_batch(params, config, x)
        diff = pred - y
        total += float((diff**2).sum())
        count += diff.size
    return total / count


@dataclass
class TrainReport:
    """Summary of one training run; ``wall_time`` is the only nondeterministic field."""

    best_val_mse: float
    test_mse: float
    epochs_run: int
    wall_time: float
    seed: int
    model_config: dict = field(default_factory=dict)
    train_config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "best_val_mse": self.best_val_mse,
            "test_mse": self.test_mse,
            "epochs_run": self.epochs_run,
            "wall_time": self.wall_time,
            "seed": self.seed,
            "model_config": self.model_config,
            "train_config": self.train_config,
        }


def train(
    dataset: NormalizedDataset,
    sfnn_config: SFNNConfig,
    train_config: TrainConfig,
) -> tuple[SFNNParams, TrainReport]:
    """Train on the dataset's train segment, early-stopping on validation MSE.

    Training windows stay inside the train segment; validation and test
    windows may reach back into the preceding segment for input context, so
    every validation/test row is forecast. The returned parameters are the
    best-validation checkpoint and ``test_mse`` is that checkpoint's score.
    """
    started = time.perf_counter()
    sfnn_config = replace(sfnn_config, n_series=dataset.n_series)
    train_seg, val_seg, test_seg = split_chronological(dataset)
    lb, hz = sfnn_config.lookback, sfnn_config.horizon
    train_windows = make_windows(train_seg, lb, hz, allow_context=False)
    val_windows = make_windows(val_seg, lb, hz, allow_context=True)
    test_windows = make_windows(test_seg, lb, hz, allow_context=True)

    rng = SeededRng(train_config.seed)
    params = init_params(sfnn_config, rng)
    state = OptimizerState.for_params(params)

    best_val = math.inf
    best_params = params.copy()
    epochs_without_improvement = 0
    epochs_run = 0

    for epoch in range(1, train_config.max_epochs + 1):
        epochs_run = epoch
        order = rng.permutation(len(train_windows))
        for start in range(0, len(order), train_config.batch_size):
            idx = order[start : start + train_config.batch_size]
            x, y = train_windows.gather(idx)
            pred, trace = forward_batch(params, sfnn_config, x)
            loss, d_y = mse_loss(pred, y)
            if not math.isfinite(loss):
                raise NonFiniteLoss(
                    f"loss became {loss} at epoch {epoch}, batch starting at {start} "
                    f"(lr={train_config.learning_rate}, seed={train_config.seed})"
                )
            grads, _ = backward(params, sfnn_config, trace, d_y, need_input_grad=False)
            adam_step(params, grads, state, train_config)

        val_mse = evaluate(params, sfnn_config, val_windows)
        if not math.isfinite(val_mse):
            raise NonFiniteLoss(f"validation MSE became {val_mse} at epoch {epoch}")
        if val_mse < best_val:
            best_val = val_mse
            best_params = params.copy()
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= train_config.patience:
                break

    test_mse = evaluate(best_params, sfnn_config, test_windows)
    report = TrainReport(
        best_val_mse=best_val,
        test_mse=test_mse,
        epochs_run=epochs_run,
        wall_time=time.perf_counter() - started,
        seed=train_config.seed,
        model_config=sfnn_config.snapshot(),
        train_config=train_config.snapshot(),
    )
    return best_params, report
