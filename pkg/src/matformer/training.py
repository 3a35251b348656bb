"""Desk-scale optimization: Adam with decoupled decay, one-cycle schedule,
MSE objective, MAE and error-within-threshold evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .engine import Tensor
from .featurize import PreparedGraph, batch_prepared
from .model import Matformer


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr_max: float = 1e-3
    epochs: int = 500
    batch_size: int = 64
    weight_decay: float = 1e-5
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div: float = 1e4
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: float | None = None
    standardize_targets: bool = True

    def __post_init__(self):
        if self.lr_max < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("lr/epochs/batch must be positive")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def create(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.values) for k, p in params.items()},
            v={k: np.zeros_like(p.values) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 1e-5,
    grads: dict[str, np.ndarray] | None = None,
) -> None:
    """One bias-corrected Adam update, in place.

    Weight decay is decoupled: ``w <- w - lr*wd*w`` before the Adam delta.
    A step with any non-finite gradient is rejected wholesale.
    """
    if grads is None:
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.values)) for k, p in params.items()}
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient for parameter {name!r}; step rejected")
    b1, b2 = betas
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if weight_decay:
            p.values -= lr * weight_decay * p.values
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1**t)
        v_hat = state.v[name] / (1.0 - b2**t)
        p.values -= lr * m_hat / (np.sqrt(v_hat) + eps)


def one_cycle_lr(step: int, total_steps: int, lr_max: float,
                 pct_start: float = 0.3, div: float = 25.0, final_div: float = 1e4) -> float:
    """Cosine warmup from lr_max/div to lr_max, cosine decay to lr_max/final_div."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    ramp = pct_start * total_steps
    if step <= ramp:
        start = lr_max / div
        frac = step / ramp if ramp > 0 else 1.0
        return start + (lr_max - start) * (1.0 - math.cos(math.pi * frac)) / 2.0
    end = lr_max / final_div
    frac = (step - ramp) / (total_steps - ramp)
    return end + (lr_max - end) * (1.0 + math.cos(math.pi * frac)) / 2.0


def mae(preds, targets) -> float:
    preds = np.asarray(preds, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if preds.size == 0 or preds.shape != targets.shape:
        raise ValueError("predictions and targets must be equal-length and non-empty")
    return float(np.abs(preds - targets).mean())


def ewt(preds, targets, threshold: float) -> float:
    """Fraction of predictions with absolute error strictly below threshold."""
    preds = np.asarray(preds, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if preds.size == 0 or preds.shape != targets.shape:
        raise ValueError("predictions and targets must be equal-length and non-empty")
    return float(np.count_nonzero(np.abs(preds - targets) < threshold)) / preds.size


@dataclass
class TrainResult:
    log: list[dict]
    best_checkpoint: dict
    best_val_mae: float


def _global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    return math.sqrt(total)


def evaluate(model: Matformer, prepared: list[PreparedGraph], chunk: int = 64) -> np.ndarray:
    """Eval-mode predictions for a list of prepared graphs."""
    preds = []
    for lo in range(0, len(prepared), chunk):
        batch = batch_prepared(prepared[lo : lo + chunk])
        preds.append(model.forward(batch, training=False).values[:, 0])
    return np.concatenate(preds)


def train(
    model: Matformer,
    train_records: list,
    val_records: list,
    config: TrainConfig,
) -> TrainResult:
    """MSE training with per-epoch MAE/EwT validation.

    Records carry ``.crystal`` and ``.target``.  Targets are standardized on
    the training split (metrics are reported in original units).  The best
    checkpoint by validation MAE is retained.  Fully deterministic for a
    fixed config seed and model.
    """
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    state = AdamState.create(params)

    train_graphs = [model.prepare(r.crystal) for r in train_records]
    val_graphs = [model.prepare(r.crystal) for r in val_records]
    train_targets = np.array([r.target for r in train_records], dtype=float)
    val_targets = np.array([r.target for r in val_records], dtype=float)

    if config.standardize_targets:
        t_mean = float(train_targets.mean())
        t_std = float(train_targets.std())
        if t_std == 0.0:
            t_std = 1.0
    else:
        t_mean, t_std = 0.0, 1.0
    scaled_targets = (train_targets - t_mean) / t_std

    n_train = len(train_records)
    steps_per_epoch = math.ceil(n_train / config.batch_size)
    total_steps = config.epochs * steps_per_epoch

    log: list[dict] = []
    best_val = math.inf
    best_checkpoint = model.to_checkpoint()
    global_step = 0

    for epoch in range(config.epochs):
        order = rng.permutation(n_train)
        epoch_losses = []
        lr = 0.0
        for lo in range(0, n_train, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            batch = batch_prepared([train_graphs[i] for i in idx])
            target = Tensor(scaled_targets[idx][:, None])
            lr = one_cycle_lr(global_step, total_steps, config.lr_max,
                              config.pct_start, config.div_factor, config.final_div)
            try:
                pred = model.forward(batch, training=True)
                diff = engine.sub(pred, target)
                loss = engine.mean(engine.mul(diff, diff))
            except FloatingPointError as err:
                raise TrainingDivergedError(
                    f"non-finite forward at epoch {epoch} step {global_step}: {err}"
                ) from err
            loss_value = float(loss.values)
            if not math.isfinite(loss_value):
                raise TrainingDivergedError(f"loss diverged at epoch {epoch} step {global_step}")
            model.zero_grad()
            loss.backward()
            grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.values))
                     for k, p in params.items()}
            if config.grad_clip is not None:
                norm = _global_grad_norm(grads)
                if norm > config.grad_clip:
                    factor = config.grad_clip / norm
                    grads = {k: g * factor for k, g in grads.items()}
            adam_step(params, state, lr, config.betas, config.eps, config.weight_decay, grads)
            epoch_losses.append(loss_value)
            global_step += 1

        val_preds = evaluate(model, val_graphs) * t_std + t_mean
        val_mae = mae(val_preds, val_targets)
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(epoch_losses)),
            "val_mae": val_mae,
            "ewt_0.01": ewt(val_preds, val_targets, 0.01),
            "ewt_0.02": ewt(val_preds, val_targets, 0.02),
        }
        log.append(row)
        if val_mae < best_val:
            best_val = val_mae
            best_checkpoint = model.to_checkpoint()

    best_checkpoint["target_scale"] = {"mean": t_mean, "std": t_std}
    return TrainResult(log=log, best_checkpoint=best_checkpoint, best_val_mae=best_val)
