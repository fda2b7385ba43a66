"""Conditional rectified-flow training.

Fields are standardized per channel before training.  Channels that carry a
hard constraint are only rescaled (never shifted) so homogeneous constraints
stay homogeneous; the constraint data are transformed with
:meth:`ConstraintSpec.standardized`.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .net import NetDescriptor, OptimizerState, VelocityNet, optimizer_step
from .net.optim import LRSchedule
from .priors import PRIORS, physics_prior
from .problems import Problem, strict_fields
from .projections import ConstraintSpec, project_velocity, project_velocity_adjoint
from .seeding import child_seed, make_rng

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


# ------------------------------------------------------------ normalization


@dataclass
class Normalizer:
    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray, spec: ConstraintSpec) -> "Normalizer":
        data = np.asarray(data, dtype=float)
        c = data.shape[1]
        shift = data.mean(axis=(0, 2, 3))
        scale = data.std(axis=(0, 2, 3))
        constrained = np.zeros(c, dtype=bool)
        bc = spec.get("bc")
        if bc is not None:
            constrained |= bc.indicator.reshape(c, -1).any(axis=1)
        if spec.get("mass") is not None or spec.divergence_free is not None:
            constrained[:] = True
        rms = np.sqrt(np.mean(data**2, axis=(0, 2, 3)))
        shift[constrained] = 0.0
        scale[constrained] = rms[constrained]
        if spec.divergence_free is not None:
            scale[:] = np.sqrt(np.mean(data**2))  # (u, v) pairs must share a scale
        scale = np.where(scale > 0, scale, 1.0)
        return cls(shift, scale)

    @classmethod
    def identity(cls, channels: int) -> "Normalizer":
        return cls(np.zeros(channels), np.ones(channels))

    def forward(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.shift[:, None, None]) / self.scale[:, None, None]

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.scale[:, None, None] + self.shift[:, None, None]

    def spec(self, spec: ConstraintSpec) -> ConstraintSpec:
        return spec.standardized(self.shift, self.scale)

    def to_dict(self) -> dict:
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.asarray(d["shift"], dtype=float), np.asarray(d["scale"], dtype=float))


# ------------------------------------------------------------ masks and conditions


def sample_mask(frame_shape, k: int, seed: int, n_frames: int = 1, mode: str = "points") -> np.ndarray:
    """Boolean mask ``(n_frames, H, W)`` with exactly ``k`` ones per frame.

    ``points`` draws ``k`` grid points per frame without replacement.
    ``sensors`` draws ``k`` columns and observes them in every row, which
    gives fixed sensor locations on a ``(time, space)`` grid.
    """
    h, w = frame_shape
    rng = make_rng(seed)
    mask = np.zeros((n_frames, h, w), dtype=bool)
    if mode == "points":
        if not 0 <= k <= h * w:
            raise ValueError(f"k={k} outside [0, {h * w}]")
        for f in range(n_frames):
            mask[f].flat[rng.choice(h * w, size=k, replace=False)] = True
    elif mode == "sensors":
        if not 0 <= k <= w:
            raise ValueError(f"k={k} outside [0, {w}] sensor columns")
        for f in range(n_frames):
            mask[f][:, rng.choice(w, size=k, replace=False)] = True
    else:
        raise ValueError(f"unknown mask mode {mode!r}")
    return mask


def broadcast_mask(frame_mask: np.ndarray, channel_frames) -> np.ndarray:
    """Frame masks ``(F, H, W)`` to channel masks ``(C, H, W)``."""
    return np.asarray(frame_mask, dtype=bool)[np.asarray(channel_frames)]


@dataclass
class Condition:
    observed: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.observed.shape != self.mask.shape:
            raise ValueError("observed values and mask must have the same shape")

    def array(self) -> np.ndarray:
        """Network conditioning input ``concat(y, M)`` along the channel axis."""
        return np.concatenate([self.observed, self.mask.astype(float)], axis=-3)


def make_condition(x1: np.ndarray, mask: np.ndarray, noise_level: float = 0.0, seed: int = 0) -> Condition:
    """``y = M * (x1 + eta)``; ``eta`` has per-channel std ``noise_level * std(x1 on M)``."""
    if noise_level < 0:
        raise ValueError("noise_level must be nonnegative")
    x1 = np.asarray(x1, dtype=float)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x1.shape)
    y = np.where(mask, x1, 0.0)
    if noise_level > 0:
        rng = make_rng(seed)
        eta = rng.standard_normal(x1.shape)
        for c in range(x1.shape[-3]):
            obs = x1[..., c, :, :][mask[..., c, :, :]]
            sigma = obs.std() if obs.size > 1 else 0.0
            y[..., c, :, :] += np.where(mask[..., c, :, :], noise_level * sigma * eta[..., c, :, :], 0.0)
    return Condition(y, mask.copy())


@dataclass(frozen=True)
class MaskConfig:
    k: int
    k_min: int
    k_max: int
    mode: str = "points"
    noise_level: float = 0.0

    @classmethod
    def around(cls, k: int, mode: str = "points", noise_level: float = 0.0, spread: float = 0.5,
               k_min=None, k_max=None) -> "MaskConfig":
        lo = max(1, int(round(k * (1 - spread)))) if k_min is None else k_min
        hi = int(round(k * (1 + spread))) if k_max is None else k_max
        return cls(k, lo, hi, mode, noise_level)

    def draw_k(self, rng) -> int:
        return int(rng.integers(self.k_min, self.k_max + 1))


@dataclass
class TrainSample:
    x1: np.ndarray
    x0: np.ndarray
    t: float
    x_t: np.ndarray
    v_star: np.ndarray
    condition: Condition


def make_train_sample(x1: np.ndarray, spec: ConstraintSpec, problem: Problem, mask_cfg: MaskConfig, seed: int,
                      prior: str = "gaussian") -> TrainSample:
    """One ``(t, x_t, v*, c)`` tuple; ``x1`` and ``spec`` share one coordinate system."""
    x1 = np.asarray(x1, dtype=float)
    rng = make_rng(child_seed(seed, "train-sample"))
    t = float(rng.random())
    k = mask_cfg.draw_k(rng)
    frames = sample_mask(x1.shape[-2:], min(k, _k_cap(x1.shape, mask_cfg.mode)), child_seed(seed, "mask"),
                         problem.n_frames, mask_cfg.mode)
    cond = make_condition(x1, broadcast_mask(frames, problem.channel_frames), mask_cfg.noise_level,
                          child_seed(seed, "obs-noise"))
    x0 = physics_prior(x1.shape, spec, prior, child_seed(seed, "prior"))
    x_t = (1.0 - t) * x0 + t * x1
    return TrainSample(x1, x0, t, x_t, x1 - x0, cond)


def _k_cap(shape, mode):
    return shape[-1] if mode == "sensors" else shape[-2] * shape[-1]


# ------------------------------------------------------------ loss


def _stack(batch: List[TrainSample]):
    if not batch:
        raise ValueError("empty batch")
    t = np.array([s.t for s in batch])
    x_t = np.stack([s.x_t for s in batch])
    c = np.stack([s.condition.array() for s in batch])
    v = np.stack([s.v_star for s in batch])
    return t, x_t, c, v


def loss_and_grad(net: VelocityNet, batch: List[TrainSample], spec: ConstraintSpec, projection: bool = True,
                  need_grad: bool = True):
    """Mean over the batch of ``||P(v_theta) - v*||^2`` and its parameter gradients."""
    t, x_t, c, v_star = _stack(batch)
    raw = net.forward(t, x_t, c, record=need_grad)
    if not np.all(np.isfinite(raw)):
        raise TrainingError("non-finite network output")
    v = project_velocity(raw, spec) if projection else raw
    r = v - v_star
    loss = float(np.sum(r * r) / len(batch))
    if not need_grad:
        return loss, None
    g = 2.0 * r / len(batch)
    if projection:
        g = project_velocity_adjoint(g, spec)
    return loss, net.backward(g)


def rf_loss(net: VelocityNet, batch: List[TrainSample], spec: ConstraintSpec, projection: bool = True) -> float:
    return loss_and_grad(net, batch, spec, projection, need_grad=False)[0]


# ------------------------------------------------------------ training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 24
    lr_max: float = 1e-4
    lr_min: float = 6e-5
    warmup_epochs: float = 10.0
    weight_decay: float = 1e-4
    ema_decay: float = 0.995
    prior: str = "gaussian"
    projection: bool = True
    k: int = 0  # 0 -> problem default
    k_min: int = 0  # 0 -> round(k/2)
    k_max: int = 0  # 0 -> round(3k/2)
    noise_level: float = 0.0
    widths: tuple = (16, 32)
    time_dim: int = 16
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.prior not in PRIORS:
            raise ValueError(f"unknown prior {self.prior!r}")
        if not 0 < self.ema_decay < 1:
            raise ValueError("ema_decay must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**strict_fields(cls, d, "train config"))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    def mask_config(self, problem: Problem) -> MaskConfig:
        k = self.k or problem.default_k
        return MaskConfig.around(k, problem.mask_mode, self.noise_level,
                                 k_min=self.k_min or None, k_max=self.k_max or None)


@dataclass
class TrainResult:
    net: VelocityNet
    ema_net: VelocityNet
    normalizer: Normalizer
    state: OptimizerState
    losses: list = field(default_factory=list)
    projection: bool = True
    wall_time: float = 0.0


def descriptor_for(problem: Problem, spec: ConstraintSpec, cfg: TrainConfig) -> NetDescriptor:
    c = problem.n_channels
    out = spec.raw_shape(problem.sample_shape)[0] if cfg.projection else c
    return NetDescriptor(c, 2 * c, out, cfg.widths, cfg.time_dim)


def training_spec(problem: Problem, normalizer: Normalizer, projection: bool) -> ConstraintSpec:
    """Constraint spec in standardized coordinates; empty for the unconstrained ablation."""
    return normalizer.spec(problem.constraint_spec()) if projection else ConstraintSpec(())


def train(data: np.ndarray, problem: Problem, cfg: TrainConfig,
          on_epoch: Optional[Callable[[int, float, TrainResult], None]] = None) -> TrainResult:
    """Minibatch AdamW on the rectified-flow loss.  Returns raw and EMA networks."""
    start = time.perf_counter()
    data = np.asarray(data, dtype=float)
    if data.ndim != 4 or data.shape[1:] != tuple(problem.sample_shape):
        raise ValueError(f"dataset shape {data.shape} does not match problem {problem.sample_shape}")
    if len(data) == 0:
        raise ValueError("empty dataset")
    normalizer = Normalizer.fit(data, problem.constraint_spec())
    spec = training_spec(problem, normalizer, cfg.projection)
    xs = normalizer.forward(data)
    net = VelocityNet.init(descriptor_for(problem, spec, cfg), child_seed(cfg.seed, "init"))
    n = len(xs)
    steps_per_epoch = -(-n // cfg.batch_size)
    schedule = LRSchedule(cfg.lr_max, cfg.lr_min, cfg.warmup_epochs, max(cfg.epochs, 1))
    state = OptimizerState.create(net.params, schedule, cfg.weight_decay, cfg.ema_decay, steps_per_epoch)
    mask_cfg = cfg.mask_config(problem)
    result = TrainResult(net, VelocityNet(net.desc, state.ema.params), normalizer, state, [], cfg.projection)
    for epoch in range(cfg.epochs):
        order = make_rng(child_seed(cfg.seed, "perm", epoch)).permutation(n)
        total = 0.0
        for b0 in range(0, n, cfg.batch_size):
            idx = order[b0:b0 + cfg.batch_size]
            batch = [make_train_sample(xs[i], spec, problem, mask_cfg, child_seed(cfg.seed, "sample", epoch * n + i),
                                       cfg.prior) for i in idx]
            loss, grads = loss_and_grad(net, batch, spec, cfg.projection)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {state.step_count + 1}")
            if not optimizer_step(state, net.params, grads):
                raise TrainingError(f"non-finite gradient at epoch {epoch}, step {state.step_count + 1}")
            total += loss * len(idx)
        epoch_loss = total / n
        result.losses.append(epoch_loss)
        log.info("epoch %d loss %.6g lr %.3g", epoch, epoch_loss, state.current_lr())
        if on_epoch:
            on_epoch(epoch, epoch_loss, result)
    result.wall_time = time.perf_counter() - start
    return result
