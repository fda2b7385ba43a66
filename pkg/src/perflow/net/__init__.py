"""Conditional velocity network, reverse-mode gradients and the optimizer stack."""

from .model import NetDescriptor, VelocityNet, backward, time_embedding
from .optim import EMA, AdamW, LRSchedule, OptimizerState, optimizer_step

__all__ = [
    "NetDescriptor", "VelocityNet", "backward", "time_embedding",
    "AdamW", "EMA", "LRSchedule", "OptimizerState", "optimizer_step",
]
