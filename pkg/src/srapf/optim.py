"""AdamW with per-group learning rates and a warmup-then-cosine schedule.

The optimizer only ever sees trainable parameter groups; frozen parameters
are simply never registered, which is what guarantees they stay bit-identical
through training.
"""

from __future__ import annotations

import math

import numpy as np


class CosineWarmupSchedule:
    """Linear warmup from ``warmup_lr`` to the group base lr, then cosine decay.

    Step 0 yields exactly ``warmup_lr``; step ``warmup_iters`` yields exactly
    the base lr; the final step (``total_steps - 1``) lands exactly on
    ``floor``. After warmup the schedule is non-increasing.
    """

    def __init__(self, total_steps: int, warmup_iters: int = 18,
                 warmup_lr: float = 1e-8, floor: float = 0.0):
        if total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {total_steps}")
        if warmup_iters < 0 or warmup_lr < 0 or floor < 0:
            raise ValueError("warmup_iters, warmup_lr and floor must be >= 0")
        self.total_steps = total_steps
        self.warmup_iters = warmup_iters
        self.warmup_lr = warmup_lr
        self.floor = floor

    def lr_at(self, base_lr: float, step: int) -> float:
        if not 0 <= step < self.total_steps:
            raise ValueError(f"step {step} outside [0, {self.total_steps})")
        if self.warmup_iters > 0 and step < self.warmup_iters:
            frac = step / self.warmup_iters
            return self.warmup_lr + frac * (base_lr - self.warmup_lr)
        span = max(1, self.total_steps - 1 - self.warmup_iters)
        progress = min(1.0, (step - self.warmup_iters) / span)
        return self.floor + 0.5 * (base_lr - self.floor) * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Standard Adam moments with decoupled weight decay.

    ``groups`` is a list of ``(name, base_lr, weight_decay, params)`` tuples.
    ``step`` takes the current per-group learning rates (typically from a
    schedule); omitted groups fall back to their base lr.
    """

    def __init__(self, groups, betas=(0.9, 0.999), eps: float = 1e-8):
        if not 0 <= betas[0] < 1 or not 0 <= betas[1] < 1:
            raise ValueError(f"betas must be in [0, 1), got {betas}")
        self.groups = []
        seen_names = set()
        for name, base_lr, weight_decay, params in groups:
            if name in seen_names:
                raise ValueError(f"duplicate group name {name!r}")
            seen_names.add(name)
            if base_lr < 0 or weight_decay < 0:
                raise ValueError(f"group {name!r}: lr and weight decay must be >= 0")
            self.groups.append({
                "name": name, "lr": base_lr, "weight_decay": weight_decay,
                "params": list(params),
                "m": [np.zeros_like(p.value) for p in params],
                "v": [np.zeros_like(p.value) for p in params],
            })
        self.betas = betas
        self.eps = eps
        self.t = 0

    def step(self, lrs=None) -> None:
        """Apply one update from the gradients currently on the parameters."""
        lrs = lrs or {}
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for g in self.groups:
            lr = lrs.get(g["name"], g["lr"])
            wd = g["weight_decay"]
            for p, m, v in zip(g["params"], g["m"], g["v"]):
                grad = p.grad
                m *= b1
                m += (1.0 - b1) * grad
                v *= b2
                v += (1.0 - b2) * grad * grad
                update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                if wd:
                    update = update + wd * p.value
                p.value -= lr * update

    def zero_grad(self) -> None:
        for g in self.groups:
            for p in g["params"]:
                p.zero_grad()
