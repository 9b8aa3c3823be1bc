"""Adam training of RUL models against the RMSE objective.

The loss is the square root of the mean squared error over every element of
the batch. Inside training the radicand carries a 1e-12 guard so the gradient
stays defined at exactly zero loss; reported metrics use the exact RMSE.
"""

from __future__ import annotations

import csv
import logging
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .data import WindowSample
from .errors import DataError, NumericError
from .models import RulTransformer

log = logging.getLogger(__name__)

LOSS_GUARD = 1e-12


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    patience: Optional[int] = None
    clip_norm: Optional[float] = None
    lr_decay: Optional[float] = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"betas must lie in [0, 1): {self.beta1}, {self.beta2}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


def rmse(pred: np.ndarray, target: np.ndarray) -> float:
    """Exact root-mean-square error over all elements."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"rmse shapes disagree: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("rmse of an empty batch is undefined")
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def rmse_loss(tape: Tape, pred: Tensor, target: np.ndarray,
              guard: float = LOSS_GUARD) -> Tensor:
    """Differentiable RMSE with a small guard inside the square root."""
    diff = ad.sub(pred, tape.constant(target))
    mse = ad.mean(ad.multiply(diff, diff))
    return ad.sqrt(ad.add(mse, tape.constant(np.asarray(guard, dtype=tape.dtype))))


class AdamState:
    """First/second moment accumulators, keyed by parameter name."""

    def __init__(self, params: Sequence[Parameter]):
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}


def adam_step(params: Sequence[Parameter], state: AdamState, cfg: TrainConfig,
              lr: Optional[float] = None) -> None:
    """One bias-corrected Adam update; parameters are updated in place."""
    lr = cfg.lr if lr is None else lr
    state.t += 1
    correct1 = 1.0 - cfg.beta1 ** state.t
    correct2 = 1.0 - cfg.beta2 ** state.t
    for p in params:
        g = p.grad
        if g is None:
            raise NumericError(f"parameter {p.name} has no gradient; run backward first")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in parameter {p.name}")
        m = state.m[p.name]
        v = state.v[p.name]
        m += (1.0 - cfg.beta1) * (g - m)
        v += (1.0 - cfg.beta2) * (g * g - v)
        m_hat = m / correct1
        v_hat = v / correct2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


def clip_gradients(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


@dataclass
class EpochStats:
    epoch: int
    train_rmse: float
    val_rmse: float
    seconds: float


@dataclass
class TrainingReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_val_rmse: float = float("nan")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_rmse", "val_rmse", "seconds"])
            for e in self.epochs:
                writer.writerow([e.epoch, f"{e.train_rmse:.6f}", f"{e.val_rmse:.6f}",
                                 f"{e.seconds:.3f}"])


def stack_windows(windows: Sequence[WindowSample]) -> tuple[np.ndarray, np.ndarray]:
    """Windows -> (features [n, T, F], targets [n, T]) float32 arrays."""
    if not windows:
        raise DataError("no windows to stack")
    x = np.stack([w.features for w in windows]).astype(np.float32)
    y = np.stack([w.targets for w in windows]).astype(np.float32)
    return x, y


def fit(model: RulTransformer, train_windows: Sequence[WindowSample],
        val_windows: Sequence[WindowSample], cfg: TrainConfig) -> TrainingReport:
    """Mini-batch Adam training with per-epoch validation.

    Batches are reshuffled each epoch from the config seed. The parameters of
    the best-validation epoch are restored into the model before returning,
    so a checkpoint saved afterwards holds the best model seen.
    """
    if not train_windows:
        raise DataError("training set is empty")
    x_train, y_train = stack_windows(train_windows)
    has_val = len(val_windows) > 0
    if has_val:
        x_val, y_val = stack_windows(val_windows)

    params = model.parameters()
    state = AdamState(params)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, zlib.crc32(b"batch-shuffle")])
    )
    report = TrainingReport()
    best_val = float("inf")
    best_params: Optional[dict[str, np.ndarray]] = None
    stale_epochs = 0
    lr = cfg.lr

    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        order = shuffle_rng.permutation(len(x_train))
        sse = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            tape = Tape(np.float32)
            pred = model.forward(tape, tape.constant(xb), training=True)
            loss = rmse_loss(tape, pred, yb)
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            sse += float(np.sum((pred.data.astype(np.float64) - yb) ** 2))
            tape.backward(loss)
            if cfg.clip_norm is not None:
                clip_gradients(params, cfg.clip_norm)
            adam_step(params, state, cfg, lr=lr)
        train_rmse = float(np.sqrt(sse / y_train.size))
        val_rmse = rmse(model.predict(x_val), y_val) if has_val else float("nan")
        seconds = time.perf_counter() - started
        report.epochs.append(EpochStats(epoch, train_rmse, val_rmse, seconds))
        log.info("epoch %d: train_rmse=%.4f val_rmse=%.4f (%.2fs)",
                 epoch, train_rmse, val_rmse, seconds)

        tracked = val_rmse if has_val else train_rmse
        if tracked < best_val:
            best_val = tracked
            report.best_epoch = epoch
            report.best_val_rmse = val_rmse
            best_params = {p.name: p.data.copy() for p in params}
            stale_epochs = 0
        else:
            stale_epochs += 1
            if cfg.patience is not None and stale_epochs >= cfg.patience:
                log.info("early stop after %d stale epochs", stale_epochs)
                break
        if cfg.lr_decay is not None:
            lr *= cfg.lr_decay

    if best_params is not None:
        for p in params:
            p.data = best_params[p.name]
    return report


def mean_predictor_rmse(train_windows: Sequence[WindowSample],
                        eval_windows: Sequence[WindowSample]) -> float:
    """RMSE of the constant predictor equal to the train-target mean."""
    _, y_train = stack_windows(train_windows)
    _, y_eval = stack_windows(eval_windows)
    constant = float(y_train.mean())
    return rmse(np.full_like(y_eval, constant), y_eval)
