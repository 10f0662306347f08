"""Adam, learning-rate plateau scheduling and early stopping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import NonFinite, ShapeMismatch, SpecInvalid


@dataclass
class TrainConfig:
    initial_lr: float = 1e-3
    batch_size: int = 128
    lr_factor: float = 0.2
    lr_patience: int = 5
    early_stop_patience: int = 7
    max_epochs: int = 200
    seed: int = 0
    min_lr: float = 1e-6
    improvement_delta: float = 0.0

    def __post_init__(self):
        if not 0 < self.lr_factor < 1:
            raise SpecInvalid("lr_factor must lie in (0, 1)")
        if self.lr_patience < 1 or self.early_stop_patience < 1:
            raise SpecInvalid("patiences must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise SpecInvalid("batch_size and max_epochs must be >= 1")
        if self.initial_lr < 0 or self.min_lr < 0:
            raise SpecInvalid("learning rates must be non-negative")


@dataclass
class Adam:
    """Adam with bias correction. Moments live in the parameters' dtype."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> None:
        """Update ``params`` in place. A non-finite gradient aborts the step
        before anything is modified."""
        for name, g in grads.items():
            if params[name].shape != g.shape:
                raise ShapeMismatch(f"gradient shape mismatch for {name}")
            if not np.all(np.isfinite(g)):
                raise NonFinite(f"non-finite gradient for {name}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * np.square(g)
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p -= update.astype(p.dtype, copy=False)


@dataclass
class PlateauMonitor:
    """Shared best-loss tracker driving both LR reduction and early stopping.

    An epoch improves when its loss is strictly below ``best - delta``.
    """

    lr_patience: int = 5
    lr_factor: float = 0.2
    min_lr: float = 1e-6
    stop_patience: int = 7
    delta: float = 0.0
    best: float = float("inf")
    best_epoch: int = -1
    since_best: int = 0
    lr_wait: int = 0
    epoch: int = -1

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "PlateauMonitor":
        return cls(cfg.lr_patience, cfg.lr_factor, cfg.min_lr,
                   cfg.early_stop_patience, cfg.improvement_delta)

    def update(self, loss: float, lr: float) -> tuple[float, bool, bool]:
        """Record one epoch's validation loss.

        Returns ``(new_lr, improved, stop)``.
        """
        self.epoch += 1
        improved = loss < self.best - self.delta
        if improved:
            self.best = loss
            self.best_epoch = self.epoch
            self.since_best = 0
            self.lr_wait = 0
        else:
            self.since_best += 1
            self.lr_wait += 1
            if self.lr_wait >= self.lr_patience:
                if lr > self.min_lr:
                    lr = max(lr * self.lr_factor, self.min_lr)
                self.lr_wait = 0
        return lr, improved, self.since_best >= self.stop_patience


def lr_on_plateau(history, cfg: TrainConfig, lr: float | None = None) -> float:
    """Learning rate to use after replaying the validation-loss ``history``."""
    if len(history) == 0:
        raise ValueError("history must not be empty")
    lr = cfg.initial_lr if lr is None else lr
    mon = PlateauMonitor.from_config(cfg)
    for loss in history:
        lr, _, _ = mon.update(float(loss), lr)
    return lr


def early_stop(history, patience: int = 7, delta: float = 0.0) -> tuple[bool, int]:
    """Replay ``history``; return ``(stop, best_epoch)``."""
    if len(history) == 0:
        raise ValueError("history must not be empty")
    mon = PlateauMonitor(stop_patience=patience, delta=delta)
    stop = False
    for loss in history:
        _, _, stop = mon.update(float(loss), 0.0)
    return stop, mon.best_epoch
