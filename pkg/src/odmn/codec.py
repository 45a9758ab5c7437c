"""Distribution segmentation and bucketing of LTV labels.

Each task's value range is split into sub-distributions (exact high-frequency
values such as 0 become singleton sub-distributions; the rest is cut at
configured points), and every sub-distribution into equal-frequency buckets.
A label is then described by (sub-distribution, bucket, bias), where the bias
is the label's min-max position among the training labels of its bucket.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import canonical_hash, nearest_rank_cuts
from .errors import ConfigError

SCHEME_FORMAT = 1


@dataclass
class Bucket:
    upper_edge: float  # values <= upper_edge (and above the previous edge) land here
    min: float  # in-bucket training min: left boundary when decoding
    max: float
    count: int
    global_index: int = -1
    slot: int = -1  # position in the bias tower output, -1 for singleton buckets

    @property
    def singleton(self):
        return self.max == self.min

    @property
    def width(self):
        return self.max - self.min


@dataclass
class SubDistribution:
    kind: str  # "singleton" or "range"
    buckets: list

    @property
    def n_buckets(self):
        return len(self.buckets)

    @property
    def n_bias(self):
        return sum(1 for b in self.buckets if not b.singleton)

    def arrays(self):
        lo = np.array([b.min for b in self.buckets])
        width = np.array([b.width for b in self.buckets])
        ns = np.array([j for j, b in enumerate(self.buckets) if not b.singleton], dtype=np.int64)
        return lo, width, ns


@dataclass
class TaskScheme:
    subdists: list

    @property
    def n_subdists(self):
        return len(self.subdists)

    @property
    def n_buckets(self):
        return sum(s.n_buckets for s in self.subdists)

    def buckets(self):
        return [b for s in self.subdists for b in s.buckets]

    def occupancy(self):
        return [[b.count for b in s.buckets] for s in self.subdists]


@dataclass
class BucketConfig:
    """How to segment one task.

    ``singletons``: exact values that form their own sub-distribution.
    ``cut_points``: split the remaining range into sub-distributions (a, b].
    ``buckets``: bucket count per range sub-distribution, in ascending order;
    the last entry repeats if there are more ranges than entries.
    """

    singletons: tuple = (0.0,)
    cut_points: tuple = ()
    buckets: tuple = (10,)

    def to_dict(self):
        return {"singletons": list(self.singletons), "cut_points": list(self.cut_points),
                "buckets": list(self.buckets)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d.get("singletons", (0.0,))), tuple(d.get("cut_points", ())), tuple(d.get("buckets", (10,))))


@dataclass
class BucketingScheme:
    tasks: list = field(default_factory=list)

    @property
    def n_tasks(self):
        return len(self.tasks)

    def __getitem__(self, t):
        return self.tasks[t]

    def to_dict(self):
        def edge(x):
            return None if np.isinf(x) else float(x)

        return {
            "format_version": SCHEME_FORMAT,
            "tasks": [
                {"subdists": [
                    {"kind": s.kind,
                     "buckets": [{"upper_edge": edge(b.upper_edge), "min": float(b.min), "max": float(b.max),
                                  "count": int(b.count), "global_index": int(b.global_index), "slot": int(b.slot)}
                                 for b in s.buckets]}
                    for s in ts.subdists]}
                for ts in self.tasks
            ],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != SCHEME_FORMAT:
            raise ConfigError(f"unsupported scheme format {d.get('format_version')!r}")
        tasks = []
        for td in d["tasks"]:
            subs = []
            for sd in td["subdists"]:
                bs = [Bucket(np.inf if b["upper_edge"] is None else b["upper_edge"], b["min"], b["max"], b["count"],
                             b["global_index"], b["slot"]) for b in sd["buckets"]]
                subs.append(SubDistribution(sd["kind"], bs))
            tasks.append(TaskScheme(subs))
        return cls(tasks)

    def hash(self):
        return canonical_hash(self.to_dict())

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------- fitting

def _range_buckets(values, n_buckets, upper):
    cuts = nearest_rank_cuts(values, n_buckets)
    distinct = np.unique(values).size
    if len(cuts) + 1 < n_buckets:
        warnings.warn(f"requested {n_buckets} buckets but only {len(cuts) + 1} are separable "
                      f"({distinct} distinct values); bucket count reduced", stacklevel=3)
    idx = np.searchsorted(cuts, values, side="left")
    buckets = []
    for j in range(len(cuts) + 1):
        inside = values[idx == j]
        edge = cuts[j] if j < len(cuts) else upper
        buckets.append(Bucket(float(edge), float(inside.min()), float(inside.max()), int(inside.size)))
    return buckets


def fit_task_scheme(labels, config=None):
    config = config or BucketConfig()
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.size == 0:
        raise ConfigError("cannot fit a bucketing scheme on no labels")
    singles = sorted(set(float(v) for v in config.singletons))
    present = set(np.unique(y).tolist())
    for v in [v for v in singles if v not in present]:
        warnings.warn(f"singleton value {v!r} does not occur in the labels; dropped", stacklevel=2)
    singles = [v for v in singles if v in present]
    is_single = np.isin(y, singles)
    rest = y[~is_single]

    breakpoints = sorted(set(singles) | set(float(c) for c in config.cut_points))
    range_id = np.searchsorted(np.array(breakpoints), rest, side="left") if breakpoints else np.zeros(rest.size, int)

    # walk breakpoints in order: range below each breakpoint, then the singleton itself
    subdists = []
    n_ranges_seen = 0
    for k in range(len(breakpoints) + 1):
        members = rest[range_id == k]
        upper = breakpoints[k] if k < len(breakpoints) else np.inf
        if members.size:
            nb = config.buckets[min(n_ranges_seen, len(config.buckets) - 1)] if config.buckets else 1
            subdists.append(SubDistribution("range", _range_buckets(members, int(nb), float(upper))))
        n_ranges_seen += 1
        if k < len(breakpoints) and breakpoints[k] in singles:
            v = breakpoints[k]
            subdists.append(SubDistribution("singleton", [Bucket(v, v, v, int(np.sum(y == v)))]))

    if len(subdists) == 1 and subdists[0].kind == "range" and subdists[0].n_buckets == 1 and np.unique(y).size == 1:
        warnings.warn("all labels identical; scheme has a single singleton bucket", stacklevel=2)
        v = float(y[0])
        subdists = [SubDistribution("singleton", [Bucket(v, v, v, int(y.size))])]
    elif len(subdists) == 1 and subdists[0].kind == "singleton":
        warnings.warn("all labels identical; scheme has a single singleton bucket", stacklevel=2)

    # the last range bucket absorbs everything above it
    ranges = [s for s in subdists if s.kind == "range"]
    if ranges:
        ranges[-1].buckets[-1].upper_edge = np.inf
    g = 0
    for s in subdists:
        slot = 0
        for b in s.buckets:
            b.global_index = g
            g += 1
            if not b.singleton:
                b.slot = slot
                slot += 1
    return TaskScheme(subdists)


def fit_bucketing(labels, config=None):
    """Fit one :class:`TaskScheme` per column of ``labels`` (n, T).

    ``config`` is a single :class:`BucketConfig` or one per task.
    """
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    configs = config if isinstance(config, (list, tuple)) else [config] * y.shape[1]
    if len(configs) != y.shape[1]:
        raise ConfigError(f"{len(configs)} bucket configs for {y.shape[1]} tasks")
    return BucketingScheme([fit_task_scheme(y[:, t], configs[t]) for t in range(y.shape[1])])


# --------------------------------------------------------------------------- encode / decode

@dataclass
class EncodedTargets:
    """Per-sample targets for one task. ``bias`` is NaN and ``slot`` -1 for singleton buckets."""

    sub: np.ndarray
    bucket: np.ndarray
    global_bucket: np.ndarray
    bias: np.ndarray
    slot: np.ndarray
    clamped: int = 0

    def __len__(self):
        return self.sub.shape[0]


def _lookup_tables(ts):
    buckets = ts.buckets()
    sub_of = np.array([s for s, sd in enumerate(ts.subdists) for _ in sd.buckets], dtype=np.int64)
    local_of = np.array([j for sd in ts.subdists for j in range(sd.n_buckets)], dtype=np.int64)
    range_g = np.array([b.global_index for s in ts.subdists if s.kind == "range" for b in s.buckets], dtype=np.int64)
    range_up = np.array([b.upper_edge for s in ts.subdists if s.kind == "range" for b in s.buckets])
    singles = {s.buckets[0].min: s.buckets[0].global_index for s in ts.subdists if s.kind == "singleton"}
    return buckets, sub_of, local_of, range_g, range_up, singles


def encode_labels(values, ts):
    """Vectorized label encoding against one task's scheme.

    Values outside their bucket's training [min, max] get a clamped bias and
    are counted in ``clamped``; nothing raises.
    """
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    buckets, sub_of, local_of, range_g, range_up, singles = _lookup_tables(ts)
    g = np.full(x.size, -1, dtype=np.int64)
    for v, gi in singles.items():
        g[x == v] = gi
    todo = g < 0
    if todo.any():
        if range_g.size:
            pos = np.minimum(np.searchsorted(range_up, x[todo], side="left"), range_g.size - 1)
            g[todo] = range_g[pos]
        else:
            # singleton-only scheme: nearest singleton value
            vals = np.array(sorted(singles))
            gis = np.array([singles[v] for v in vals])
            near = np.abs(x[todo][:, None] - vals[None, :]).argmin(axis=1)
            g[todo] = gis[near]
    lo = np.array([b.min for b in buckets])[g]
    hi = np.array([b.max for b in buckets])[g]
    slot = np.array([b.slot for b in buckets], dtype=np.int64)[g]
    single = hi == lo
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(single, np.nan, (x - lo) / np.where(single, 1.0, hi - lo))
    clamped = int(np.sum(single & (x != lo)) + np.sum(~single & ((raw < 0) | (raw > 1))))
    bias = np.where(single, np.nan, np.clip(raw, 0.0, 1.0))
    return EncodedTargets(sub_of[g], local_of[g], g, bias, slot, clamped)


def encode_label(ltv, scheme, task=0):
    """Scalar form of :func:`encode_labels`: returns (sub, bucket, global_bucket, bias or None, clamped)."""
    ts = scheme[task] if isinstance(scheme, BucketingScheme) else scheme
    e = encode_labels([ltv], ts)
    bias = None if np.isnan(e.bias[0]) else float(e.bias[0])
    return int(e.sub[0]), int(e.bucket[0]), int(e.global_bucket[0]), bias, e.clamped


def ordinal_targets(label_index, U):
    """Binary targets for P(label > u), u = 0..U-1."""
    if not 0 <= label_index < U:
        raise ValueError(f"label index {label_index} outside [0, {U})")
    out = np.zeros(U)
    out[:label_index] = 1.0
    return out


def decode(p_c, q_c, q_b, ts, bias_mode="tower"):
    """Hard decode: argmax sub-distribution, then argmax bucket, then min + bias * width.

    ``bias_mode="midpoint"`` ignores ``q_b`` and returns the bucket's (min + max) / 2.
    Ties resolve to the lowest index. Accepts single samples (1-D) or batches.
    """
    p_c = np.asarray(p_c, dtype=np.float64)
    single = p_c.ndim == 1
    if single:
        p_c = p_c[None, :]
        q_c = [np.asarray(q, dtype=np.float64)[None, :] for q in q_c]
        q_b = None if q_b is None else [None if q is None else np.asarray(q, dtype=np.float64)[None, :] for q in q_b]
    n = p_c.shape[0]
    sub = np.argmax(p_c, axis=1)
    out = np.empty(n)
    for s, sd in enumerate(ts.subdists):
        rows = np.nonzero(sub == s)[0]
        if rows.size == 0:
            continue
        j = np.argmax(np.asarray(q_c[s])[rows], axis=1)
        lo, width, _ = sd.arrays()
        slots = np.array([b.slot for b in sd.buckets], dtype=np.int64)[j]
        if bias_mode == "midpoint":
            bias = np.full(rows.size, 0.5)
        elif bias_mode == "tower":
            bias = np.zeros(rows.size)
            has = slots >= 0
            if has.any():
                qb = np.asarray(q_b[s])[rows]
                bias[has] = qb[np.nonzero(has)[0], slots[has]]
        else:
            raise ValueError(f"unknown bias_mode {bias_mode!r}")
        out[rows] = lo[j] + bias * width[j]
    return float(out[0]) if single else out
