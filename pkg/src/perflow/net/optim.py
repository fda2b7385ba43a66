"""AdamW with decoupled weight decay, warmup + cosine learning rate, parameter EMA."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LRSchedule:
    """Linear warmup from 0 to ``lr_max`` over ``warmup_epochs``, then cosine to ``lr_min``
    at ``total_epochs``.  Epoch values may be fractional."""

    lr_max: float = 1e-4
    lr_min: float = 6e-5
    warmup_epochs: float = 10.0
    total_epochs: float = 500.0

    def __call__(self, epoch: float) -> float:
        if self.warmup_epochs > 0 and epoch < self.warmup_epochs:
            return self.lr_max * epoch / self.warmup_epochs
        span = self.total_epochs - self.warmup_epochs
        if span <= 0:
            return self.lr_max
        frac = min(max((epoch - self.warmup_epochs) / span, 0.0), 1.0)
        return self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + math.cos(math.pi * frac))


class AdamW:
    def __init__(self, params: Dict[str, np.ndarray], weight_decay: float = 1e-4,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.weight_decay = weight_decay
        self.betas = tuple(betas)
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], lr: float) -> bool:
        """Update ``params`` in place.  Returns False (and skips) on non-finite gradients."""
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            log.warning("non-finite gradient at optimizer step %d; step skipped", self.step_count + 1)
            return False
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for k, p in params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * self.weight_decay * p
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True


class EMA:
    def __init__(self, params: Dict[str, np.ndarray], decay: float = 0.995):
        if not 0.0 < decay < 1.0:
            raise ValueError("EMA decay must lie in (0, 1)")
        self.decay = decay
        self.params = {k: v.copy() for k, v in params.items()}

    def update(self, params: Dict[str, np.ndarray]) -> None:
        d = self.decay
        for k, p in params.items():
            e = self.params[k]
            e *= d
            e += (1.0 - d) * p


@dataclass
class OptimizerState:
    """Everything needed to resume training: AdamW moments, schedule, EMA copy."""

    schedule: LRSchedule
    adam: AdamW
    ema: EMA
    steps_per_epoch: int = 1
    history: list = field(default_factory=list)

    @classmethod
    def create(cls, params, schedule: LRSchedule, weight_decay=1e-4, ema_decay=0.995, steps_per_epoch=1):
        return cls(schedule, AdamW(params, weight_decay), EMA(params, ema_decay), steps_per_epoch)

    @property
    def step_count(self) -> int:
        return self.adam.step_count

    def current_lr(self) -> float:
        return self.schedule(self.adam.step_count / max(self.steps_per_epoch, 1))

    def config_dict(self) -> dict:
        return {
            "schedule": asdict(self.schedule),
            "weight_decay": self.adam.weight_decay,
            "betas": list(self.adam.betas),
            "eps": self.adam.eps,
            "ema_decay": self.ema.decay,
            "steps_per_epoch": self.steps_per_epoch,
            "step_count": self.adam.step_count,
        }


def optimizer_step(state: OptimizerState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> bool:
    """One scheduled AdamW step followed by the EMA update."""
    lr = state.current_lr()
    ok = state.adam.step(params, grads, lr)
    if ok:
        state.ema.update(params)
    return ok
