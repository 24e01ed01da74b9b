"""AdamW with decoupled weight decay, and a warmup + cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .params import ParamStore


@dataclass
class OptimizerState:
    lr_base: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore, **hyper) -> "OptimizerState":
        state = cls(**hyper)
        for name, t in params.items():
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        return state


def optimizer_step(params: ParamStore, state: OptimizerState, lr: float) -> None:
    """One in-place AdamW update using each parameter's ``.grad``.

    Weight decay shrinks the parameter by ``lr * weight_decay`` independently
    of the adaptive gradient step.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.step
    corr2 = 1.0 - b2 ** state.step
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        m = state.m.setdefault(name, np.zeros_like(t.data))
        v = state.v.setdefault(name, np.zeros_like(t.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if state.weight_decay:
            t.data *= 1.0 - lr * state.weight_decay
        m_hat = m / corr1
        v_hat = v / corr2
        t.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class ScheduleConfig:
    eta_max: float = 2e-4
    eta_min: float = 1e-6
    total_steps: int = 10000
    warmup_steps: int = 500

    def __post_init__(self):
        if not 0 <= self.eta_min <= self.eta_max:
            raise ValueError("need 0 <= eta_min <= eta_max")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ValueError("need 0 <= warmup_steps < total_steps")


def lr_at(step: int, s: ScheduleConfig) -> float:
    """Linear warmup to eta_max, then cosine annealing down to eta_min at total_steps."""
    if step < s.warmup_steps:
        return s.eta_max * step / s.warmup_steps
    t = min(1.0, (step - s.warmup_steps) / (s.total_steps - s.warmup_steps))
    return s.eta_min + 0.5 * (s.eta_max - s.eta_min) * (1.0 + math.cos(math.pi * t))
