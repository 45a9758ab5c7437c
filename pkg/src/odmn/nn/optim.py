"""Adam with per-group learning rates and non-negativity projection."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, NumericError


@dataclass
class AdamState:
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def copy(self):
        return AdamState(self.step, self.beta1, self.beta2, self.epsilon,
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()})


def adam_step(params, grads, state, lr):
    """One Adam update applied in place to ``params``.

    ``grads`` maps each Parameter to its gradient (missing entries count as
    zero). ``lr`` is a float or a dict keyed by parameter group. Parameters
    flagged ``nonnegative`` are clamped at 0 afterwards.
    """
    for p in params:
        g = grads.get(p)
        if g is not None:
            if np.shape(g) != p.value.shape:
                raise DimensionError(f"gradient for {p.name} has shape {np.shape(g)}, expected {p.value.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {p.name}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in params:
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.value)
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        rate = lr[p.group] if isinstance(lr, dict) else lr
        p.value -= rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        if p.nonnegative:
            np.maximum(p.value, 0.0, out=p.value)
    return params, state


class Adam:
    def __init__(self, params, lr=0.05, group_lr=None, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.lr = dict(group_lr or {})
        self.default_lr = lr
        self.state = AdamState(beta1=beta1, beta2=beta2, epsilon=epsilon)

    def _rates(self):
        groups = {p.group for p in self.params}
        return {g: self.lr.get(g, self.default_lr) for g in groups}

    def step(self, grads):
        adam_step(self.params, grads, self.state, self._rates())
