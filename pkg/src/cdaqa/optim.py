"""Adam and the linear warmup-then-decay learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .autograd import Tensor
from .errors import ContractError, InvariantViolation


class Adam:
    """Standard Adam with bias correction; refuses frozen parameters."""

    def __init__(self, params: list[Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        for p in params:
            if not p.requires_grad:
                raise InvariantViolation("optimizer handed a frozen parameter")
        if len(set(map(id, params))) != len(params):
            raise ContractError("duplicate parameter in optimizer")
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None


def warmup_linear(base_lr: float, total_steps: int, warmup_fraction: float) -> list[float]:
    """Per-step rates: ramp to base_lr over the warmup span, then a straight
    line that would hit zero right after the final step."""
    if total_steps < 1:
        raise ContractError("schedule needs at least one step")
    if not 0.0 <= warmup_fraction < 1.0:
        raise ContractError("warmup_fraction must lie in [0, 1)")
    warm = int(round(total_steps * warmup_fraction))
    warm = min(warm, total_steps - 1)
    out = []
    for s in range(total_steps):
        if s < warm:
            out.append(base_lr * (s + 1) / warm)
        else:
            out.append(base_lr * (total_steps - s) / (total_steps - warm))
    return out
