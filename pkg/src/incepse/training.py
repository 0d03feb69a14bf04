"""Optimization: clipping, AdamW, learning-rate schedules and the fit loop.

Each PTB-XL task has a default scheduler (OneCycle or ReduceOnPlateau), base
learning rate, epoch count and dropout. Global-norm clipping at 0.1 and
decoupled weight decay 1e-4 apply to all of them.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.special import expit

from .autodiff import Tape
from .checkpoint import save_checkpoint
from .data import Dataset, batches, split_folds
from .layers import bce_with_logits
from .metrics import macro_auroc
from .model import IncepSEConfig, ModelParams, bind, init_params, model_forward

__all__ = [
    "TrainConfig",
    "TASK_DEFAULTS",
    "TrainingDiverged",
    "bce_with_logits",
    "clip_global_norm",
    "global_norm",
    "AdamW",
    "OneCycle",
    "Plateau",
    "schedule_lr",
    "loss_and_grads",
    "predict_logits",
    "EpochRecord",
    "TrainReport",
    "fit",
    "write_report",
    "read_report",
    "mean_std",
]

log = logging.getLogger(__name__)


TASK_DEFAULTS: dict[str, dict] = {
    "all": dict(scheduler="onecycle", sched_epochs=13, base_lr=1e-2, epochs=15, dropout_p=0.0),
    "diag": dict(scheduler="onecycle", sched_epochs=16, base_lr=1e-2, epochs=18, dropout_p=0.05),
    "sub": dict(scheduler="plateau", plateau_factor=0.3, plateau_patience=1, base_lr=1e-3, epochs=15,
                dropout_p=0.09),
    "super": dict(scheduler="onecycle", sched_epochs=14, base_lr=1e-2, epochs=15, dropout_p=0.11),
    "form": dict(scheduler="onecycle", sched_epochs=16, base_lr=1e-2, epochs=25, dropout_p=0.1),
    "rhythm": dict(scheduler="onecycle", sched_epochs=16, base_lr=1e-2, epochs=20, dropout_p=0.1),
}


@dataclass(frozen=True)
class TrainConfig:
    task: str = "super"
    scheduler: str = "onecycle"
    sched_epochs: int | None = None  # OneCycle horizon; defaults to `epochs`
    plateau_factor: float = 0.3
    plateau_patience: int = 1
    base_lr: float = 1e-2
    epochs: int = 15
    dropout_p: float = 0.11
    clip_norm: float | None = 0.1
    weight_decay: float = 1e-4
    batch_size: int = 128
    seed: int = 0
    warmup_frac: float = 0.3
    div_factor: float = 25.0
    final_div: float = 1e4
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.scheduler not in ("onecycle", "plateau"):
            raise ValueError(f"scheduler must be 'onecycle' or 'plateau', got {self.scheduler!r}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive (None disables clipping)")
        if self.base_lr <= 0 or self.batch_size < 1 or self.weight_decay < 0:
            raise ValueError("base_lr > 0, batch_size >= 1 and weight_decay >= 0 are required")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "TrainConfig":
        if task not in TASK_DEFAULTS:
            raise KeyError(f"no defaults for task {task!r}; known: {sorted(TASK_DEFAULTS)}")
        return cls(task=task, **{**TASK_DEFAULTS[task], **overrides})

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int, grad_norms: list[float]):
        self.epoch, self.step, self.grad_norms = epoch, step, grad_norms
        tail = ", ".join(f"{g:.3g}" for g in grad_norms[-10:])
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}; recent grad norms: [{tail}]")


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple[dict, float]:
    """Rescale all gradients together so their joint L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads), 1.0
    scale = max_norm / norm
    return {k: g * g.dtype.type(scale) for k, g in grads.items()}, scale


@dataclass
class AdamW:
    """Adam with bias correction and decoupled weight decay; updates in place."""

    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step_count: int = 0

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float,
             weight_decay: float = 0.0) -> None:
        b1, b2 = self.betas
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if weight_decay:
                update += lr * weight_decay * p
            p -= update.astype(p.dtype, copy=False)


def _cos_interp(start: float, end: float, pct: float) -> float:
    if pct <= 0:
        return start
    if pct >= 1:
        return end
    return end + (start - end) * (1.0 + math.cos(math.pi * pct)) / 2.0


@dataclass
class OneCycle:
    """Cosine warm-up to ``max_lr`` then cosine anneal, stepped per batch.

    Starts at ``max_lr / div_factor``, peaks at step ``warmup_steps``, reaches
    ``max_lr / final_div`` at step ``total_steps - 1`` and holds it afterwards.
    """

    max_lr: float
    total_steps: int
    warmup_frac: float = 0.3
    div_factor: float = 25.0
    final_div: float = 1e4

    def __post_init__(self):
        if self.total_steps < 3:
            raise ValueError(f"OneCycle needs at least 3 scheduled steps, got {self.total_steps}")

    @property
    def start_lr(self) -> float:
        return self.max_lr / self.div_factor

    @property
    def end_lr(self) -> float:
        return self.max_lr / self.final_div

    @property
    def warmup_steps(self) -> int:
        last = self.total_steps - 1
        return min(max(int(round(self.warmup_frac * last)), 1), last - 1)

    def lr_at(self, step: int) -> float:
        w = self.warmup_steps
        last = self.total_steps - 1
        if step <= w:
            return _cos_interp(self.start_lr, self.max_lr, step / w)
        return _cos_interp(self.max_lr, self.end_lr, (step - w) / (last - w))


@dataclass
class Plateau:
    """Multiply the rate by ``factor`` once the metric fails to improve for ``patience`` epochs."""

    initial_lr: float
    factor: float = 0.3
    patience: int = 1
    best: float = -math.inf
    bad_epochs: int = 0
    reductions: int = 0

    @property
    def lr(self) -> float:
        return self.initial_lr * self.factor ** self.reductions

    def step(self, metric: float) -> float:
        if metric > self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.reductions += 1
                self.bad_epochs = 0
        return self.lr


def schedule_lr(state, epoch_or_step: int, val_metric: float | None = None) -> float:
    """Learning rate from a OneCycle (per step) or Plateau (per epoch) state."""
    if isinstance(state, OneCycle):
        return state.lr_at(epoch_or_step)
    if isinstance(state, Plateau):
        if val_metric is None:
            raise ValueError("plateau scheduling needs a validation metric")
        return state.step(val_metric)
    raise TypeError(f"unknown scheduler state {type(state).__name__}")


def loss_and_grads(m: ModelParams, x, y, rng: np.random.Generator | None = None,
                   mode: str = "train") -> tuple[float, dict[str, np.ndarray]]:
    tape = Tape()
    weights = bind(m, tape)
    loss = bce_with_logits(model_forward(x, m, mode, rng, weights), y)
    grads = tape.backward(loss)
    return loss.item(), {name: grads[t] for name, t in weights.items()}


def predict_logits(m: ModelParams, dataset: Dataset, batch_size: int = 128) -> np.ndarray:
    out = [model_forward(xb.values.astype(m.dtype, copy=False), m, "eval").values
           for xb, _ in batches(dataset, batch_size)]
    return np.concatenate(out, axis=0)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_auroc: float
    lr: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord]
    best_epoch: int
    test_auroc: float
    seed: int
    checkpoint_path: str | None = None
    test_skipped: list[int] = field(default_factory=list)
    best_params: ModelParams | None = field(default=None, compare=False, repr=False)

    @property
    def best_val_auroc(self) -> float:
        return self.epochs[self.best_epoch - 1].val_auroc


def _model_config(config: TrainConfig, dataset: Dataset, model_config: IncepSEConfig | None) -> IncepSEConfig:
    base = model_config or IncepSEConfig()
    return base.replace(input_channels=dataset.num_leads, num_classes=dataset.task.num_classes,
                        dropout_p=config.dropout_p)


def fit(config: TrainConfig, dataset: Dataset, model_config: IncepSEConfig | None = None,
        checkpoint_dir=None) -> TrainReport:
    """Train on folds 1-8, select by fold-9 macro AUROC, report fold-10 AUROC.

    Architecture fields come from ``model_config``; input channels and class
    count follow the dataset and dropout follows ``config``.
    """
    train, val, test = split_folds(dataset)
    dtype = np.dtype(config.dtype)
    params = init_params(_model_config(config, dataset, model_config), config.seed, dtype)
    rng = np.random.default_rng([config.seed, 1])
    opt = AdamW()
    steps_per_epoch = math.ceil(len(train) / config.batch_size)
    if config.scheduler == "onecycle":
        sched = OneCycle(config.base_lr, (config.sched_epochs or config.epochs) * steps_per_epoch,
                         config.warmup_frac, config.div_factor, config.final_div)
    else:
        sched = Plateau(config.base_lr, config.plateau_factor, config.plateau_patience)
    ckpt_path = Path(checkpoint_dir) / f"best_seed{config.seed}.ckpt" if checkpoint_dir else None

    history: list[EpochRecord] = []
    grad_norms: list[float] = []
    best_val, best_epoch, best_params = -math.inf, 0, None
    step = 0
    for epoch in range(1, config.epochs + 1):
        total, count, lr = 0.0, 0, sched.lr_at(step) if isinstance(sched, OneCycle) else sched.lr
        for xb, yb in batches(train, config.batch_size, shuffle=True, seed=config.seed, epoch=epoch, dtype=dtype):
            lr = schedule_lr(sched, step) if isinstance(sched, OneCycle) else sched.lr
            loss, grads = loss_and_grads(params, xb, yb, rng)
            norm = global_norm(grads)
            grad_norms.append(norm)
            if not (math.isfinite(loss) and math.isfinite(norm)):
                raise TrainingDiverged(epoch, step, grad_norms)
            if config.clip_norm is not None:
                grads, _ = clip_global_norm(grads, config.clip_norm)
            opt.step(params.params, grads, lr, config.weight_decay)
            total += loss * xb.shape[0]
            count += xb.shape[0]
            step += 1
        val_auroc, _ = macro_auroc(expit(predict_logits(params, val, config.batch_size)), val.labels)
        history.append(EpochRecord(epoch, total / count, val_auroc, lr))
        log.info("epoch %d loss %.5f val_auroc %.5f lr %.3g", epoch, total / count, val_auroc, lr)
        if val_auroc > best_val:
            best_val, best_epoch, best_params = val_auroc, epoch, params.copy()
            if ckpt_path is not None:
                save_checkpoint(best_params, ckpt_path)
        if isinstance(sched, Plateau):
            schedule_lr(sched, epoch, val_auroc)

    test_auroc, skipped = macro_auroc(expit(predict_logits(best_params, test, config.batch_size)), test.labels)
    return TrainReport(history, best_epoch, test_auroc, config.seed,
                       str(ckpt_path) if ckpt_path else None, skipped, best_params)


REPORT_HEADER = "epoch,train_loss,val_auroc,lr"


def write_report(report: TrainReport, path) -> None:
    """Per-epoch rows, then ``summary,best_epoch,test_auroc,seed``."""
    lines = [REPORT_HEADER]
    lines += [f"{e.epoch},{e.train_loss!r},{e.val_auroc!r},{e.lr!r}" for e in report.epochs]
    lines.append(f"summary,{report.best_epoch},{report.test_auroc!r},{report.seed}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path) -> TrainReport:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != REPORT_HEADER:
        raise ValueError(f"{path}: not a training report")
    epochs, summary = [], None
    for line in lines[1:]:
        cols = line.split(",")
        if cols[0] == "summary":
            summary = cols
        elif line:
            epochs.append(EpochRecord(int(cols[0]), float(cols[1]), float(cols[2]), float(cols[3])))
    if summary is None:
        raise ValueError(f"{path}: missing summary line")
    return TrainReport(epochs, int(summary[1]), float(summary[2]), int(summary[3]))


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation (0 for a single run)."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())
