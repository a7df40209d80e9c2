"""AdamW with decoupled weight decay and a warm-up / linear-decay schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def lr_schedule(step, peak_lr, warmup_steps, total_steps):
    """Linear warm-up to peak_lr, then linear decay to zero at total_steps."""
    if warmup_steps > 0 and step < warmup_steps:
        return peak_lr * step / warmup_steps
    if total_steps <= warmup_steps:
        return peak_lr
    frac = (total_steps - step) / (total_steps - warmup_steps)
    return peak_lr * max(0.0, frac)


@dataclass
class AdamW:
    """Holds per-parameter moment estimates keyed by parameter name."""

    peak_lr: float = 1e-3
    warmup_steps: int = 0
    total_steps: int = 10000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def current_lr(self):
        return lr_schedule(self.step_count, self.peak_lr, self.warmup_steps,
                           self.total_steps)

    def step(self, params):
        """Apply one AdamW update to `params` (name -> Tensor with .grad)."""
        lr = self.current_lr()
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data -= lr * (mhat / (np.sqrt(vhat) + self.eps)
                            + self.weight_decay * p.data)

    def zero_grad(self, params):
        for p in params.values():
            p.grad = None
