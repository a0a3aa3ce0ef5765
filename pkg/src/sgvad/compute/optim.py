"""SGD with momentum and the warmup-hold-decay learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SgdConfig:
    momentum: float = 0.9
    weight_decay: float = 1e-3

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass(frozen=True)
class LrSchedule:
    total_steps: int
    warmup_ratio: float = 0.05
    hold_ratio: float = 0.45
    max_lr: float = 1e-2
    min_lr: float = 1e-4
    decay_power: float = 2.0

    def __post_init__(self):
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")
        if not 0.0 <= self.warmup_ratio + self.hold_ratio <= 1.0 or min(self.warmup_ratio, self.hold_ratio) < 0:
            raise ValueError("warmup_ratio + hold_ratio must lie in [0, 1]")
        if self.min_lr > self.max_lr:
            raise ValueError("min_lr exceeds max_lr")


def lr_at(step: int, sched: LrSchedule) -> float:
    """Linear ramp from 0, flat hold, then polynomial decay to ``min_lr``."""
    s = sched.total_steps
    if not 0 <= step <= s:
        raise ValueError(f"step {step} outside [0, {s}]")
    warmup_end = sched.warmup_ratio * s
    hold_end = (sched.warmup_ratio + sched.hold_ratio) * s
    if step < warmup_end:
        return sched.max_lr * step / warmup_end
    if step < hold_end or hold_end >= s:
        return sched.max_lr
    u = (step - hold_end) / (s - hold_end)
    return sched.min_lr + (sched.max_lr - sched.min_lr) * (1.0 - u) ** sched.decay_power


def sgd_step(params, lr: float, cfg: SgdConfig = SgdConfig()) -> None:
    """In-place momentum SGD; weight decay only on parameters flagged ``decay``."""
    for p in params:
        g = p.grad
        if p.decay and cfg.weight_decay:
            g = g + cfg.weight_decay * p.value
        p.momentum_buf *= cfg.momentum
        p.momentum_buf += g
        p.value -= (lr * p.momentum_buf).astype(p.value.dtype)
        p.grad[...] = 0
