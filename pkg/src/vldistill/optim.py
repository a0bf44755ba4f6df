"""Adam with bias correction and decoupled weight decay.

Moment state is created lazily per trainable parameter, so frozen tensors
never acquire optimizer state. Gradients are cleared after each step; the
training loops rebuild the autodiff trace from scratch every iteration.
"""

from __future__ import annotations

import numpy as np

from .errors import OptimizerError
from .nn import ParamSet


class AdamState:
    """Per-parameter first/second moment arrays plus the shared step counter."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if lr <= 0:
            raise OptimizerError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params: ParamSet, state: AdamState) -> None:
    """One in-place update of all trainable parameters; frozen ones untouched.

    A trainable parameter with no gradient is a contract violation: the loss
    should have reached everything the optimizer owns.
    """
    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        if not p.requires_grad:
            continue
        if p.grad is None:
            raise OptimizerError(f"trainable parameter {name!r} has no gradient")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v, g = state.m[name], state.v[name], p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        step = state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        if state.weight_decay != 0.0:
            step = step + state.lr * state.weight_decay * p.data
        p.data -= step
        p.grad = None
