"""Point-error metrics, Lorenz curves, Gini coefficients and Mutual Gini."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .codec import encode_labels
from .errors import MetricError

REPORT_FORMAT = 1


def _pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.shape != y_hat.shape:
        raise MetricError(f"length mismatch: {y.size} labels vs {y_hat.size} predictions")
    return y, y_hat


def nrmse(y, y_hat):
    y, y_hat = _pair(y, y_hat)
    m = y.mean() if y.size else 0.0
    if m <= 0:
        raise MetricError("NRMSE undefined: mean of true values is not positive")
    return float(np.sqrt(np.mean((y_hat - y) ** 2)) / m)


def nmae(y, y_hat):
    y, y_hat = _pair(y, y_hat)
    m = y.mean() if y.size else 0.0
    if m <= 0:
        raise MetricError("NMAE undefined: mean of true values is not positive")
    return float(np.mean(np.abs(y_hat - y)) / m)


def ambe(y, y_hat):
    y, y_hat = _pair(y, y_hat)
    return float(abs(y_hat.mean() - y.mean()))


def gini(class_counts):
    """Class-count Gini: sum_i (2i - C - 1) N_i / (C * sum_i N_i), classes in ascending value order."""
    n = np.asarray(class_counts, dtype=np.float64).reshape(-1)
    if n.size == 0 or n.sum() <= 0:
        raise MetricError("Gini needs at least one non-empty class")
    C = n.size
    i = np.arange(1, C + 1)
    return float(np.sum((2 * i - C - 1) * n) / (C * n.sum()))


@dataclass
class LorenzCurve:
    x: np.ndarray
    y: np.ndarray

    def __call__(self, q):
        return np.interp(q, self.x, self.y)

    def area(self):
        return float(np.sum(np.diff(self.x) * (self.y[1:] + self.y[:-1]) / 2.0))

    def to_text(self):
        lines = ["#odmn-lorenz/1", "x,y"]
        lines += [f"{a!r},{b!r}" for a, b in zip(self.x.tolist(), self.y.tolist())]
        return "\n".join(lines) + "\n"


def lorenz(order_values, mass_values):
    """Users sorted by ``order_values`` descending (stable), cumulative share of ``mass_values``."""
    order = np.asarray(order_values, dtype=np.float64).reshape(-1)
    mass = np.asarray(mass_values, dtype=np.float64).reshape(-1)
    if order.shape != mass.shape:
        raise MetricError("order and mass arrays differ in length")
    if np.any(mass < 0):
        raise MetricError("Lorenz mass values must be non-negative")
    total = mass.sum()
    if total <= 0:
        raise MetricError("Lorenz curve undefined: total mass is zero")
    idx = np.argsort(-order, kind="stable")
    cum = np.cumsum(mass[idx])
    n = mass.size
    x = np.arange(n + 1) / n
    y = np.concatenate([[0.0], cum / total])
    y[-1] = 1.0
    return LorenzCurve(x, y)


def mutual_gini(curve_true, curve_model):
    """Exact area between two piecewise-linear Lorenz curves, integrated on their merged breakpoints."""
    grid = np.union1d(curve_true.x, curve_model.x)
    diff = curve_true(grid) - curve_model(grid)
    return kernels.abs_area(grid, diff)


def estimate_lorenz(y_hat):
    """Lorenz curve of the estimated values themselves (ordered and accumulated by estimate).

    Negative estimates carry no mass. An all-zero estimate vector gives the diagonal.
    """
    mass = np.maximum(np.asarray(y_hat, dtype=np.float64).reshape(-1), 0.0)
    if mass.sum() <= 0:
        n = mass.size
        return LorenzCurve(np.arange(n + 1) / n, np.arange(n + 1) / n)
    return lorenz(mass, mass)


def lorenz_gini(curve):
    """Gini of a descending Lorenz curve: 2 * (area under curve) - 1."""
    return 2.0 * curve.area() - 1.0


def monotonicity_violations(preds):
    """Per adjacent horizon pair, the fraction of rows with pred_t > pred_{t+1}; plus the any-pair rate."""
    p = np.asarray(preds, dtype=np.float64)
    if p.shape[1] < 2:
        return [], 0.0
    bad = p[:, :-1] > p[:, 1:]
    return [float(r) for r in bad.mean(axis=0)], float(bad.any(axis=1).mean())


@dataclass
class EvalReport:
    horizons: list
    tasks: list  # one dict of metric values per horizon
    violation_pairs: list
    violation_any: float
    n: int
    curves: dict = field(default_factory=dict, repr=False)

    def task(self, horizon):
        return self.tasks[self.horizons.index(horizon)]

    def to_dict(self):
        return {
            "format_version": REPORT_FORMAT,
            "n": self.n,
            "horizons": list(self.horizons),
            "tasks": self.tasks,
            "monotonicity": {"pairs": self.violation_pairs, "any": self.violation_any},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)


def evaluate_predictions(labels, preds, horizons, scheme=None):
    """Full report for (n, T) labels and predictions.

    ``mutual_gini`` compares the true Lorenz curve with the Lorenz curve of the
    estimates; ``mutual_gini_gain`` uses the gain-chart curve instead (users
    ordered by estimate, true mass accumulated), which never rises above the
    true curve. Gini* uses the scheme's global buckets as classes when a
    scheme is given.
    """
    labels = np.asarray(labels, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    tasks, curves = [], {}
    pairs, any_rate = monotonicity_violations(preds)
    for t, h in enumerate(horizons):
        y, p = labels[:, t], preds[:, t]
        true_curve = lorenz(y, y)
        model_curve = estimate_lorenz(p)
        gain_curve = lorenz(p, y)
        curves[h] = (true_curve, model_curve, gain_curve)
        g_true = lorenz_gini(true_curve)
        rec = {
            "horizon": int(h),
            "nrmse": nrmse(y, p),
            "nmae": nmae(y, p),
            "ambe": ambe(y, p),
            "mutual_gini": mutual_gini(true_curve, model_curve),
            "mutual_gini_gain": mutual_gini(true_curve, gain_curve),
            "normalized_model_gini": (lorenz_gini(gain_curve) / g_true) if g_true > 0 else float("nan"),
            "violation_rate_next": pairs[t] if t < len(pairs) else None,
        }
        if scheme is not None:
            ts = scheme.tasks[t]
            m = ts.n_buckets
            rec["gini_true"] = gini(np.bincount(encode_labels(y, ts).global_bucket, minlength=m))
            rec["gini_model"] = gini(np.bincount(encode_labels(np.maximum(p, 0.0), ts).global_bucket, minlength=m))
        tasks.append(rec)
    return EvalReport(list(horizons), tasks, pairs, any_rate, int(labels.shape[0]), curves)
