"""Central finite-difference gradient checker."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tape import FrozenStops, Tape


@dataclass
class GradCheckReport:
    tolerance: float
    per_tensor: dict = field(default_factory=dict)

    @property
    def max_error(self):
        return max(self.per_tensor.values(), default=0.0)

    @property
    def passed(self):
        return self.max_error < self.tolerance

    def failures(self):
        return {k: e for k, e in self.per_tensor.items() if e >= self.tolerance}


def finite_diff_check(loss_fn, params, tolerance=1e-4, h=1e-5, analytic=None):
    """Compare analytic gradients of ``loss_fn`` with central differences.

    ``loss_fn()`` builds the scalar loss from the current parameter values.
    ``analytic`` overrides the tape gradients (used to test the checker).
    The error per element is |ga - gfd| / max(|ga|, |gfd|, 1e-8).

    Values routed through ``stop_gradient`` are held at their unperturbed
    values during the perturbed evaluations, so both sides differentiate the
    same function.
    """
    stops = FrozenStops()
    with stops:
        with Tape() as tape:
            loss = loss_fn()
        if analytic is None:
            grads = tape.backward(loss)
            analytic = {p: grads.get(p, np.zeros_like(p.value)) for p in params}
    report = GradCheckReport(tolerance)

    def evaluate():
        with stops.replay():
            return float(loss_fn().value)

    for p in params:
        ga = np.asarray(analytic.get(p, np.zeros_like(p.value)), dtype=np.float64)
        flat = p.value.reshape(-1)
        fd = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = evaluate()
            flat[i] = orig - h
            down = evaluate()
            flat[i] = orig
            fd[i] = (up - down) / (2.0 * h)
        ga = ga.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(fd)), 1e-8)
        report.per_tensor[p.name] = float(np.max(np.abs(ga - fd) / denom)) if flat.size else 0.0
    return report
