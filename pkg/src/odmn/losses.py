"""Training objectives for the MDME blocks and the cross-horizon calibration penalty."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .model import soft_estimate
from .nn import Node, ops

PROB_FLOOR = 1e-12


@dataclass
class LossWeights:
    alpha: float = 1.0  # calibration
    beta: float = 0.5  # sub-distribution distillation
    gamma: float = 0.5  # bucket distillation, shared across sub-distributions
    temperature: float = 0.3  # sharpening of the estimates fed to the calibration penalty

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.temperature > 0:
            raise ValueError("calibration temperature must be positive")


def _zero():
    return Node(np.float64(0.0))


def _as_2d(x):
    x = ops.as_node(x)
    if x.value.ndim == 1:
        x = ops.as_node(x.value[None, :]) if not x.requires_grad else x
    return x


def _masked_mean(per_sample, mask):
    """Mean of a (B, 1) node over rows where ``mask`` is set; 0 for an empty mask."""
    n = per_sample.value.shape[0]
    if mask is None:
        return ops.mul(ops.sum(per_sample), 1.0 / n)
    mask = np.asarray(mask, dtype=bool)
    cnt = int(mask.sum())
    if cnt == 0:
        return _zero()
    if cnt == n:
        return ops.mul(ops.sum(per_sample), 1.0 / n)
    return ops.sum(ops.mul(per_sample, (mask / cnt)[:, None]))


def _safe_index(target, mask, upper):
    t = np.asarray(target, dtype=np.int64).reshape(-1).copy()
    if mask is not None:
        t[~np.asarray(mask, dtype=bool)] = 0
    return np.clip(t, 0, upper - 1)


def ce_loss(probs, target, mask=None):
    """Mean of -log(probs[target]) over unmasked rows."""
    probs = _as_2d(probs)
    idx = _safe_index(target, mask, probs.value.shape[1])
    picked = ops.take_along_rows(probs, idx)
    return _masked_mean(ops.mul(ops.log(picked, PROB_FLOOR), -1.0), mask)


def ordinal_loss(P, target, mask=None):
    """Ordinal-regression loss: -[sum_{u<y} log P^u + sum_{u>=y} log(1 - P^u)], batch-averaged."""
    P = _as_2d(P)
    U = P.value.shape[1]
    y = _safe_index(target, mask, U)
    above = (np.arange(U)[None, :] < y[:, None]).astype(np.float64)
    pos = ops.mul(ops.log(P, PROB_FLOOR), above)
    neg = ops.mul(ops.log(ops.sub(1.0, P), PROB_FLOOR), 1.0 - above)
    per_sample = ops.mul(ops.sum(ops.add(pos, neg), axis=1, keepdims=True), -1.0)
    return _masked_mean(per_sample, mask)


def ordinal_point_estimate(P):
    """Number of entries with P^u >= 0.5 (row-wise for 2-D input)."""
    P = np.asarray(P, dtype=np.float64)
    return (P >= 0.5).sum(axis=-1)


def soft_label_from_ordinal(P):
    """Categorical distribution from exceedance probabilities P(l > u).

    pi_0 = 1 - P^0, pi_u = P^{u-1} - P^u, pi_{U-1} = P^{U-2}; negatives are
    clamped to 0 and the result renormalized (uniform if nothing is left).
    """
    P = np.asarray(P, dtype=np.float64)
    one = P.ndim == 1
    P2 = P[None, :] if one else P
    B, U = P2.shape
    if U == 1:
        pi = np.ones((B, 1))
    else:
        pi = np.empty((B, U))
        pi[:, 0] = 1.0 - P2[:, 0]
        pi[:, 1:U - 1] = P2[:, 0:U - 2] - P2[:, 1:U - 1]
        pi[:, U - 1] = P2[:, U - 2]
        pi = np.maximum(pi, 0.0)
        tot = pi.sum(axis=1, keepdims=True)
        empty = tot[:, 0] <= 0
        pi = np.where(empty[:, None], 1.0 / U, pi / np.where(tot > 0, tot, 1.0))
    return pi[0] if one else pi


def distill_loss(student, teacher, mask=None):
    """Cross-entropy of the student against a fixed (gradient-stopped) teacher distribution."""
    student = _as_2d(student)
    if isinstance(teacher, Node):
        teacher = ops.stop_gradient(teacher).value
    teacher = np.asarray(teacher, dtype=np.float64)
    if teacher.ndim == 1:
        teacher = teacher[None, :]
    per_sample = ops.mul(ops.sum(ops.mul(ops.log(student, PROB_FLOOR), teacher), axis=1, keepdims=True), -1.0)
    return _masked_mean(per_sample, mask)


def bias_loss(q_b, slot, target, mask=None):
    """Squared error of the bias output at each sample's target slot; rows with slot < 0 are skipped."""
    q_b = _as_2d(q_b)
    slot = np.asarray(slot, dtype=np.int64).reshape(-1)
    keep = slot >= 0
    if mask is not None:
        keep &= np.asarray(mask, dtype=bool)
    if not keep.any():
        return _zero()
    idx = np.where(keep, slot, 0)
    tgt = np.where(keep, np.nan_to_num(np.asarray(target, dtype=np.float64).reshape(-1)), 0.0)
    picked = ops.take_along_rows(q_b, idx)
    return _masked_mean(ops.square(ops.sub(picked, tgt[:, None])), keep)


def calibration_loss(estimates):
    """(1/B) * sum over samples and adjacent horizons of max(y_t - y_{t+1}, 0).

    ``estimates`` is a list of (B, 1) nodes/arrays, one per horizon, or a (B, T) array.
    """
    if isinstance(estimates, np.ndarray) or (estimates and not isinstance(estimates[0], (Node, np.ndarray))):
        arr = np.asarray(estimates, dtype=np.float64)
        arr = arr[None, :] if arr.ndim == 1 else arr
        estimates = [arr[:, t:t + 1] for t in range(arr.shape[1])]
    if len(estimates) < 2:
        return _zero()
    n = ops.as_node(estimates[0]).value.shape[0]
    total = None
    for a, b in zip(estimates, estimates[1:]):
        term = ops.sum(ops.relu(ops.sub(a, b)))
        total = term if total is None else ops.add(total, term)
    return ops.mul(total, 1.0 / n)


@dataclass
class LossSwitches:
    distillation: bool = True
    bias: bool = True
    calibration: bool = True


def total_loss(outputs, targets, scheme, weights=None, switches=None):
    """Joint objective over all horizons.

    Per task: CE + ordinal + beta * distillation at the sub-distribution level
    (all samples) and, per sub-distribution, CE + ordinal + gamma * distillation
    + bias MSE on the samples whose target lies in it. The calibration penalty
    is added once, weighted by alpha. Returns (loss node, {component: float}).
    """
    w = weights or LossWeights()
    sw = switches or LossSwitches()
    parts = defaultdict(float)
    terms = []

    def add(key, node, scale=1.0):
        parts[key] += float(node.value) * scale
        terms.append(node if scale == 1.0 else ops.mul(node, scale))

    for t, (out, tgt) in enumerate(zip(outputs, targets)):
        ts = scheme.tasks[t]
        add("c", ce_loss(out.p_c, tgt.sub))
        add("o", ordinal_loss(out.p_o, tgt.sub))
        if sw.distillation and w.beta > 0:
            add("dis", distill_loss(out.p_c, soft_label_from_ordinal(ops.stop_gradient(out.p_o).value)), w.beta)
        for s in range(ts.n_subdists):
            mask = tgt.sub == s
            if not mask.any():
                continue
            add("c", ce_loss(out.q_c[s], tgt.bucket, mask))
            add("o", ordinal_loss(out.q_o[s], tgt.bucket, mask))
            if sw.distillation and w.gamma > 0:
                teacher = soft_label_from_ordinal(ops.stop_gradient(out.q_o[s]).value)
                add("dis", distill_loss(out.q_c[s], teacher, mask), w.gamma)
            if sw.bias and out.q_b[s] is not None:
                add("b", bias_loss(out.q_b[s], tgt.slot, tgt.bias, mask))
    if sw.calibration and w.alpha > 0 and len(outputs) > 1:
        est = [soft_estimate(out, ts, w.temperature) for out, ts in zip(outputs, scheme.tasks)]
        add("cali", calibration_loss(est), w.alpha)
    loss = terms[0]
    for term in terms[1:]:
        loss = ops.add(loss, term)
    parts["total"] = float(loss.value)
    return loss, dict(parts)


def mse_loss(preds, labels):
    """Plain MSE summed over horizons (baseline objective)."""
    total = None
    for t, p in enumerate(preds):
        term = ops.mean(ops.square(ops.sub(p, labels[:, t:t + 1])))
        total = term if total is None else ops.add(total, term)
    return total
