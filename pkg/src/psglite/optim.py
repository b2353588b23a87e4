"""AdamW with decoupled weight decay, global-norm clipping, warmup-cosine lr.

Defaults follow the training recipe used throughout: lr 1e-5, weight decay
0.02, clip at 1.0. Betas/epsilon are the conventional (0.9, 0.999, 1e-8);
they are not part of any external contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


class AdamW:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-5,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.02):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"parameter {k!r} has no gradient")
            g = p.grad
            # decay is decoupled: applied to the incoming value, independent
            # of the moment estimates
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def clip_grad_norm(params: dict[str, Tensor], max_norm: float = 1.0) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm.

    Returns the pre-clip norm. Applying twice equals applying once (the
    rescaled norm is not strictly greater than max_norm).
    """
    sq = 0.0
    for p in params.values():
        if p.grad is not None:
            sq += float((p.grad * p.grad).sum())
    norm = math.sqrt(sq)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    min_lr: float = 0.0
    warmup_steps: int = 0
    total_steps: int = 1

    def __post_init__(self):
        if not (0 <= self.warmup_steps < self.total_steps):
            raise ValueError("need 0 <= warmup_steps < total_steps")


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Linear ramp 0 -> base_lr over warmup, then cosine to min_lr at the end."""
    if step < 0 or step > schedule.total_steps:
        raise ValueError("step outside the schedule range")
    if schedule.warmup_steps > 0 and step < schedule.warmup_steps:
        return schedule.base_lr * step / schedule.warmup_steps
    span = schedule.total_steps - schedule.warmup_steps
    frac = (step - schedule.warmup_steps) / span
    cos = 0.5 * (1.0 + math.cos(math.pi * frac))
    return schedule.min_lr + (schedule.base_lr - schedule.min_lr) * cos
