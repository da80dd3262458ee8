"""Adam with one learning rate per parameter group."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(tensors: dict, grads: dict, state: AdamState, lrs: dict, groups: dict,
              betas=(0.9, 0.999), eps: float = 1e-8) -> AdamState:
    """Update ``tensors`` in place.

    ``groups`` maps each tensor name to a group name and ``lrs`` maps group
    names to learning rates.
    """
    b1, b2 = betas
    state.step += 1
    t = state.step
    for name, param in tensors.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != param.shape:
            raise ValueError(f"gradient shape {grad.shape} != parameter shape {param.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(param))
        v = state.v.setdefault(name, np.zeros_like(param))
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        param -= lrs[groups[name]] * m_hat / (np.sqrt(v_hat) + eps)
    return state
