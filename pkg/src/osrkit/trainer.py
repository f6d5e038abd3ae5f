"""SGD training loop with warm-up, cosine decay, paired batches, and checkpoints.

Training is single-threaded over one graph per step and fully deterministic
given (seed, config, data): batch permutations are seeded per epoch, so a run
resumed from a checkpoint replays exactly the steps an uninterrupted run
would have taken.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Graph, backward
from .data import DatasetBundle, batch_iter
from .errors import ConfigError, NumericError
from .losses import BatchPair, LossConfig, total_loss
from .model import OpenSetModel, closed_set_scores, save_checkpoint


@dataclass
class OptimConfig:
    epochs: int = 300
    batch_size_known: int = 64
    batch_size_background: int = 64
    lr_init: float = 0.0005
    warmup_epochs: int = 5
    momentum: float = 0.9
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables periodic checkpoints

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr_init <= 0.0:
            raise ConfigError(f"lr_init must be > 0, got {self.lr_init}")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(
                f"warmup_epochs must satisfy 0 <= warmup < epochs, got {self.warmup_epochs}"
            )
        if min(self.batch_size_known, self.batch_size_background) < 1:
            raise ConfigError("batch sizes must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss_cf: float
    loss_bg_k: float
    loss_bg_u: float
    loss_total: float
    train_accuracy: float


class TrainTrace:
    """One record per completed epoch, exportable as CSV."""

    COLUMNS = ("epoch", "lr", "loss_cf", "loss_bg_k", "loss_bg_u", "loss_total", "train_accuracy")

    def __init__(self):
        self.records: list[EpochRecord] = []

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def to_csv(self, path) -> None:
        lines = [",".join(self.COLUMNS)]
        for r in self.records:
            lines.append(
                f"{r.epoch},{r.lr!r},{r.loss_cf!r},{r.loss_bg_k!r},"
                f"{r.loss_bg_u!r},{r.loss_total!r},{r.train_accuracy!r}"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def lr_schedule(epoch: int, cfg: OptimConfig) -> float:
    """Linear ramp 0 -> lr_init over the warm-up, then half-cosine decay to 0."""
    w = cfg.warmup_epochs
    if epoch < w:
        return cfg.lr_init * epoch / w
    span = max(cfg.epochs - 1 - w, 1)
    progress = (epoch - w) / span
    return cfg.lr_init * 0.5 * (1.0 + math.cos(math.pi * progress))


def train_accuracy(model: OpenSetModel, bundle: DatasetBundle) -> float:
    _, pred = closed_set_scores(model, bundle.train_known_x)
    return float((pred == bundle.train_known_y).mean())


def train(
    bundle: DatasetBundle,
    model: OpenSetModel,
    loss_cfg: LossConfig,
    optim_cfg: OptimConfig,
    checkpoint_dir=None,
    start_epoch: int = 0,
    velocity: dict[str, np.ndarray] | None = None,
) -> TrainTrace:
    """SGD with momentum over paired known/background mini-batches.

    Mutates the model in place and returns the trace for epochs
    [start_epoch, epochs).  Pass start_epoch and the checkpointed velocity to
    resume; the result is identical to never having stopped.
    """
    loss_cfg.validate(model.head_type)
    named = dict(model.named_parameters())
    trainable = [(name, t) for name, t in named.items() if t.requires_grad]
    if velocity is None:
        velocity = {}
    for name, t in trainable:
        velocity.setdefault(name, np.zeros_like(t.values))

    needs_background = loss_cfg.family != "none"
    trace = TrainTrace()
    for epoch in range(start_epoch, optim_cfg.epochs):
        lr = lr_schedule(epoch, optim_cfg)
        if needs_background:
            bg_batches = [
                xb
                for xb, _ in batch_iter(
                    bundle.background_x,
                    None,
                    optim_cfg.batch_size_background,
                    seed=(optim_cfg.seed, epoch, 1),
                )
            ]
        sums = {"cf": 0.0, "bg_k": 0.0, "bg_u": 0.0, "total": 0.0}
        steps = 0
        known_iter = batch_iter(
            bundle.train_known_x,
            bundle.train_known_y,
            optim_cfg.batch_size_known,
            seed=(optim_cfg.seed, epoch, 0),
        )
        for kx, ky in known_iter:
            bgx = bg_batches[steps % len(bg_batches)] if needs_background else None
            g = Graph()
            parts = total_loss(g, model, BatchPair(kx, ky, bgx), loss_cfg)
            total = float(parts.total.values)
            if not math.isfinite(total):
                raise NumericError(
                    f"non-finite loss {total} at epoch {epoch}, step {steps}"
                )
            backward(parts.total)
            for name, t in trainable:
                grad = t.grad if t.grad is not None else np.zeros_like(t.values)
                v = optim_cfg.momentum * velocity[name] + grad
                velocity[name] = v
                t.values = t.values - lr * v
                t.zero_grad()
            sums["cf"] += parts.cf
            sums["bg_k"] += parts.bg_k
            sums["bg_u"] += parts.bg_u
            sums["total"] += total
            steps += 1
        trace.append(
            EpochRecord(
                epoch=epoch,
                lr=lr,
                loss_cf=sums["cf"] / steps,
                loss_bg_k=sums["bg_k"] / steps,
                loss_bg_u=sums["bg_u"] / steps,
                loss_total=sums["total"] / steps,
                train_accuracy=train_accuracy(model, bundle),
            )
        )
        if (
            checkpoint_dir is not None
            and optim_cfg.checkpoint_every > 0
            and (epoch + 1) % optim_cfg.checkpoint_every == 0
        ):
            save_checkpoint(
                model,
                Path(checkpoint_dir) / f"checkpoint_epoch_{epoch + 1}.json",
                training_state={"epoch": epoch + 1, "velocity": velocity},
            )
    return trace
