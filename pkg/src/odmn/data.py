"""Datasets: schema, synthetic generator, delimited-file I/O, feature encoding."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IngestionError

DATASET_FORMAT = "odmn-dataset/1"
SEQ_DELIM = ";"


def canonical_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class FeatureSchema:
    """Feature layout plus the prediction horizons (in days, strictly increasing).

    ``categorical`` is a list of (name, vocabulary); ``numeric`` of (name, bins);
    ``sequence`` of (name, length, bins).
    """

    categorical: list = field(default_factory=list)
    numeric: list = field(default_factory=list)
    sequence: list = field(default_factory=list)
    horizons: list = field(default_factory=list)

    def __post_init__(self):
        self.categorical = [(str(n), [str(v) for v in vocab]) for n, vocab in self.categorical]
        self.numeric = [(str(n), int(b)) for n, b in self.numeric]
        self.sequence = [(str(n), int(length), int(b)) for n, length, b in self.sequence]
        self.horizons = [int(h) for h in self.horizons]
        self.validate()

    def validate(self):
        if not self.horizons:
            raise ConfigError("schema needs at least one horizon")
        if any(a >= b for a, b in zip(self.horizons, self.horizons[1:])):
            raise ConfigError(f"horizons must be strictly increasing, got {self.horizons}")
        for name, bins in self.numeric:
            if bins < 2:
                raise ConfigError(f"numeric feature {name!r}: bin count must be >= 2")
        for name, length, bins in self.sequence:
            if bins < 2 or length < 1:
                raise ConfigError(f"sequence feature {name!r}: need length >= 1 and bins >= 2")
        names = self.feature_names + self.label_names
        if len(set(names)) != len(names):
            raise ConfigError("duplicate column names in schema")

    @property
    def feature_names(self):
        return ([n for n, _ in self.categorical] + [n for n, _ in self.numeric]
                + [n for n, _, _ in self.sequence])

    @property
    def label_names(self):
        return [f"ltv{h}" for h in self.horizons]

    def to_dict(self):
        return {
            "format_version": 1,
            "categorical": [[n, list(v)] for n, v in self.categorical],
            "numeric": [[n, b] for n, b in self.numeric],
            "sequence": [[n, length, b] for n, length, b in self.sequence],
            "horizons": list(self.horizons),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("categorical", []), d.get("numeric", []), d.get("sequence", []), d["horizons"])

    def hash(self):
        return canonical_hash(self.to_dict())


@dataclass
class FeatureRow:
    categorical: list
    numeric: list
    sequence: list
    labels: list


@dataclass
class Dataset:
    """Columnar storage for a list of users.

    ``cat`` is an (n, n_cat) array of str, ``num`` (n, n_num) float, ``seq`` a
    list of (n, length) float arrays, ``labels`` (n, T) float.
    """

    schema: FeatureSchema
    cat: np.ndarray
    num: np.ndarray
    seq: list
    labels: np.ndarray

    def __len__(self):
        return self.labels.shape[0]

    def row(self, i):
        return FeatureRow(list(self.cat[i]), [float(x) for x in self.num[i]],
                          [[float(x) for x in s[i]] for s in self.seq], [float(x) for x in self.labels[i]])

    def rows(self):
        return [self.row(i) for i in range(len(self))]

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.schema, self.cat[idx], self.num[idx], [s[idx] for s in self.seq], self.labels[idx])

    @classmethod
    def from_rows(cls, schema, rows):
        n = len(rows)
        cat = np.array([r.categorical for r in rows], dtype=object).reshape(n, len(schema.categorical))
        num = np.array([r.numeric for r in rows], dtype=np.float64).reshape(n, len(schema.numeric))
        seq = [np.array([r.sequence[k] for r in rows], dtype=np.float64).reshape(n, length)
               for k, (_, length, _) in enumerate(schema.sequence)]
        labels = np.array([r.labels for r in rows], dtype=np.float64).reshape(n, len(schema.horizons))
        return cls(schema, cat, num, seq, labels)

    def equals(self, other):
        return (self.schema.to_dict() == other.schema.to_dict()
                and np.array_equal(self.cat, other.cat)
                and np.array_equal(self.num, other.num)
                and all(np.array_equal(a, b) for a, b in zip(self.seq, other.seq))
                and np.array_equal(self.labels, other.labels))


# --------------------------------------------------------------------------- synthetic

CHANNELS = ["organic", "ads", "referral", "partner", "promo"]
WEEKDAYS = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"]
REGIONS = ["north", "south", "east", "west"]


@dataclass
class SyntheticConfig:
    n_users: int = 10_000
    horizons: tuple = (30, 90, 180, 365)
    zero_rate: float = 0.3
    cap_per_horizon: tuple | None = None
    seed: int = 0
    # engagement z = exp(N(0, sigma)); daily rate = floor + (1 - floor) * sigmoid(slope * log z + offset)
    sigma: float = 1.5
    slope: float = 2.5
    offset: float = -2.0
    rate_floor: float = 0.02
    window: int = 7
    obs_noise: float = 0.5

    def validate(self):
        if self.n_users < 1:
            raise ConfigError(f"n_users must be >= 1, got {self.n_users}")
        if not 0.0 <= self.zero_rate < 1.0:
            raise ConfigError(f"zero_rate must lie in [0, 1), got {self.zero_rate}")
        hs = list(self.horizons)
        if not hs or any(a >= b for a, b in zip(hs, hs[1:])) or hs[0] < 1:
            raise ConfigError(f"horizons must be positive and strictly increasing, got {hs}")
        if self.cap_per_horizon is not None:
            caps = list(self.cap_per_horizon)
            if len(caps) != len(hs):
                raise ConfigError("cap_per_horizon needs one value per horizon")
            if any(c < 0 for c in caps) or any(a > b for a, b in zip(caps, caps[1:])):
                raise ConfigError("cap_per_horizon must be non-negative and non-decreasing")
        if not 0.0 <= self.rate_floor < 1.0 or self.window < 1:
            raise ConfigError("rate_floor must lie in [0, 1) and window >= 1")


def default_schema(horizons=(30, 90, 180, 365), window=7):
    return FeatureSchema(
        categorical=[("channel", CHANNELS), ("install_weekday", WEEKDAYS), ("region", REGIONS)],
        numeric=[("frequency", 8), ("recency", 8), ("monetary", 16), ("noise", 8)],
        sequence=[("active_minutes", window, 10)],
        horizons=list(horizons),
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def generate_synthetic(config=None, **overrides):
    """Draw a zero-inflated, long-tailed multi-horizon LTV dataset.

    Each user has a log-normal engagement z, except a ``zero_rate`` share that
    is totally inactive (no observed history, all labels 0); the rest are active on each day
    with a fixed per-user probability, so the label for horizon N counts active
    days among the first N, is non-decreasing in N and at most N. Features
    observe a noisy 7-day history of the same process plus pure-noise columns.
    """
    cfg = config or SyntheticConfig()
    if overrides:
        cfg = SyntheticConfig(**{**cfg.__dict__, **overrides})
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_users
    hs = np.array(cfg.horizons, dtype=np.int64)
    caps = np.array(cfg.cap_per_horizon if cfg.cap_per_horizon is not None else hs, dtype=np.float64)

    log_z = rng.normal(0.0, cfg.sigma, n)
    rate = cfg.rate_floor + (1.0 - cfg.rate_floor) * _sigmoid(cfg.slope * log_z + cfg.offset)
    inactive = rng.random(n) < cfg.zero_rate

    labels = np.zeros((n, len(hs)))
    running = np.zeros(n)
    prev = 0
    for t, h in enumerate(hs):
        running = running + rng.binomial(int(h - prev), rate)
        prev = h
        labels[:, t] = np.minimum(running, caps[t])
    labels[inactive] = 0.0

    # inactive users sit at the zero-engagement point mass, so their observed history is empty too
    obs_rate = np.clip(rate * np.exp(rng.normal(0.0, cfg.obs_noise, n)), 0.0, 1.0)
    obs_rate = np.where(inactive, 0.0, obs_rate)
    active = rng.random((n, cfg.window)) < obs_rate[:, None]
    minutes = np.where(active, np.round(np.exp(rng.normal(np.log(20.0) + 0.4 * log_z[:, None], 0.8,
                                                          (n, cfg.window)))) + 1.0, 0.0)
    frequency = active.sum(axis=1).astype(np.float64)
    last = np.where(active.any(axis=1), cfg.window - 1 - np.argmax(active[:, ::-1], axis=1), -1)
    recency = np.where(last >= 0, cfg.window - 1 - last, cfg.window).astype(np.float64)
    monetary = np.round(np.exp(0.8 * log_z + rng.normal(0.0, 1.0, n)) * (frequency > 0), 4)
    noise = np.round(rng.normal(0.0, 1.0, n), 4)

    chan_logits = np.stack([np.zeros(n), 0.6 * log_z, -0.4 * log_z, 0.2 * log_z, rng.normal(0, 1, n)], axis=1)
    chan_p = np.exp(chan_logits - chan_logits.max(axis=1, keepdims=True))
    chan_p /= chan_p.sum(axis=1, keepdims=True)
    chan = (chan_p.cumsum(axis=1) < rng.random(n)[:, None]).sum(axis=1)
    chan = np.minimum(chan, len(CHANNELS) - 1)
    weekday = rng.integers(0, len(WEEKDAYS), n)
    region = rng.integers(0, len(REGIONS), n)

    schema = default_schema(tuple(int(h) for h in hs), cfg.window)
    cat = np.empty((n, 3), dtype=object)
    cat[:, 0] = np.array(CHANNELS, dtype=object)[chan]
    cat[:, 1] = np.array(WEEKDAYS, dtype=object)[weekday]
    cat[:, 2] = np.array(REGIONS, dtype=object)[region]
    num = np.stack([frequency, recency, monetary, noise], axis=1)
    return Dataset(schema, cat, num, [minutes], labels)


# --------------------------------------------------------------------------- delimited I/O

def _fmt(x):
    return repr(float(x))


def write_delimited(dataset, path, version_line=True):
    schema = dataset.schema
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if version_line:
            fh.write(f"#{DATASET_FORMAT}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(schema.feature_names + schema.label_names)
        for i in range(len(dataset)):
            cells = list(dataset.cat[i])
            cells += [_fmt(x) for x in dataset.num[i]]
            cells += [SEQ_DELIM.join(_fmt(x) for x in s[i]) for s in dataset.seq]
            cells += [_fmt(x) for x in dataset.labels[i]]
            w.writerow(cells)


def _parse_float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {text!r}")
    return v


def load_delimited(path, schema, require_labels=True):
    """Read a comma-delimited dataset; every malformed row is collected and reported.

    With ``require_labels=False`` label columns may be absent (prediction input);
    labels are then filled with zeros.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    lineno = 0
    while lineno < len(lines) and lines[lineno].startswith("#"):
        tag = lines[lineno][1:].strip()
        if tag.startswith("odmn-dataset/") and tag != DATASET_FORMAT:
            raise IngestionError([(lineno + 1, f"unsupported format {tag!r}")])
        lineno += 1
    if lineno >= len(lines):
        raise IngestionError([(lineno + 1, "missing header row")])
    header = next(csv.reader([lines[lineno]]))
    header_line = lineno + 1
    col = {name: k for k, name in enumerate(header)}
    wanted = schema.feature_names + (schema.label_names if require_labels else [])
    missing = [c for c in wanted if c not in col]
    if missing:
        raise IngestionError([(header_line, f"missing column(s): {', '.join(missing)}")])
    has_labels = all(c in col for c in schema.label_names)

    problems = []
    rows = []
    for offset, parts in enumerate(csv.reader(lines[lineno + 1:])):
        ln = header_line + 1 + offset
        if not parts:
            continue
        if len(parts) != len(header):
            problems.append((ln, f"expected {len(header)} fields, found {len(parts)}"))
            continue
        try:
            catv = [parts[col[n]] for n, _ in schema.categorical]
            numv = []
            for n, _ in schema.numeric:
                try:
                    numv.append(_parse_float(parts[col[n]]))
                except ValueError:
                    raise ValueError(f"column {n!r}: non-numeric value {parts[col[n]]!r}")
            seqv = []
            for n, length, _ in schema.sequence:
                cell = parts[col[n]].split(SEQ_DELIM)
                if len(cell) != length:
                    raise ValueError(f"column {n!r}: expected {length} elements, found {len(cell)}")
                try:
                    seqv.append([_parse_float(x) for x in cell])
                except ValueError:
                    raise ValueError(f"column {n!r}: non-numeric element")
            labv = []
            if has_labels:
                for n in schema.label_names:
                    try:
                        v = _parse_float(parts[col[n]])
                    except ValueError:
                        raise ValueError(f"label {n!r}: non-numeric value {parts[col[n]]!r}")
                    if v < 0:
                        raise ValueError(f"label {n!r}: negative value {v!r}")
                    labv.append(v)
                for (a, va), (b, vb) in zip(zip(schema.label_names, labv), zip(schema.label_names[1:], labv[1:])):
                    if va > vb:
                        raise ValueError(f"labels not monotone across horizons: {a}={va!r} > {b}={vb!r}")
            else:
                labv = [0.0] * len(schema.horizons)
        except ValueError as exc:
            problems.append((ln, str(exc)))
            continue
        rows.append(FeatureRow(catv, numv, seqv, labv))
    if problems:
        raise IngestionError(problems)
    return Dataset.from_rows(schema, rows)


def load_schema(path):
    with open(path, encoding="utf-8") as fh:
        return FeatureSchema.from_dict(json.load(fh))


def save_schema(schema, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=1)


# --------------------------------------------------------------------------- discretization

def nearest_rank_cuts(values, bins):
    """Equal-frequency cut points: the k/bins nearest-rank quantiles, k = 1..bins-1.

    Duplicates are collapsed and cuts at or above the maximum are dropped, so
    every bin (a, b] is occupied on the fitting sample.
    """
    x = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    n = x.size
    if n == 0:
        return np.empty(0)
    ranks = [-(-k * n // bins) for k in range(1, bins)]
    cuts = np.unique(x[[r - 1 for r in ranks]])
    return cuts[cuts < x[-1]]


@dataclass
class Discretizer:
    """Per-feature ascending cut points; a value maps to the number of cuts below it."""

    cuts: dict = field(default_factory=dict)

    def bin(self, name, value):
        return np.searchsorted(self.cuts[name], value, side="left")

    def n_bins(self, name):
        return len(self.cuts[name]) + 1

    def to_dict(self):
        return {"format_version": 1, "cuts": {k: [float(c) for c in v] for k, v in self.cuts.items()}}

    @classmethod
    def from_dict(cls, d):
        return cls({k: np.array(v, dtype=np.float64) for k, v in d["cuts"].items()})


def fit_discretizer(dataset, schema=None):
    schema = schema or dataset.schema
    if len(dataset) == 0:
        raise ConfigError("cannot fit a discretizer on an empty dataset")
    cuts = {}
    for k, (name, bins) in enumerate(schema.numeric):
        cuts[name] = nearest_rank_cuts(dataset.num[:, k], bins)
    for k, (name, _, bins) in enumerate(schema.sequence):
        cuts[name] = nearest_rank_cuts(dataset.seq[k], bins)
    for name, c in cuts.items():
        if len(c) == 0:
            warnings.warn(f"feature {name!r} is constant on the fitting sample; using a single bin", stacklevel=2)
    return Discretizer(cuts)


def slot_layout(schema, discretizer):
    """Names and vocabulary sizes of the embedding slots, in encoding order."""
    names, sizes = [], []
    for name, vocab in schema.categorical:
        names.append(name)
        sizes.append(len(vocab) + 1)  # last id = unknown
    for name, _ in schema.numeric:
        names.append(name)
        sizes.append(discretizer.n_bins(name))
    for name, length, _ in schema.sequence:
        for i in range(length):
            names.append(f"{name}[{i}]")
            sizes.append(discretizer.n_bins(name))
    return names, sizes


def encode_features(row, discretizer, schema):
    """Integer id per slot for one row; unseen categories map to the slot's last id."""
    ids = []
    for (name, vocab), v in zip(schema.categorical, row.categorical):
        try:
            ids.append(vocab.index(str(v)))
        except ValueError:
            ids.append(len(vocab))
    for (name, _), v in zip(schema.numeric, row.numeric):
        ids.append(int(discretizer.bin(name, v)))
    for (name, _, _), seq in zip(schema.sequence, row.sequence):
        ids.extend(int(b) for b in discretizer.bin(name, np.asarray(seq, dtype=np.float64)))
    return ids


def encode_dataset(dataset, discretizer, schema=None):
    """Vectorized :func:`encode_features` over a whole dataset -> (n, n_slots) int64."""
    schema = schema or dataset.schema
    cols = []
    for k, (name, vocab) in enumerate(schema.categorical):
        lookup = {v: i for i, v in enumerate(vocab)}
        cols.append(np.array([lookup.get(str(v), len(vocab)) for v in dataset.cat[:, k]], dtype=np.int64)[:, None])
    for k, (name, _) in enumerate(schema.numeric):
        cols.append(discretizer.bin(name, dataset.num[:, k]).astype(np.int64)[:, None])
    for k, (name, _, _) in enumerate(schema.sequence):
        cols.append(discretizer.bin(name, dataset.seq[k]).astype(np.int64))
    if not cols:
        return np.zeros((len(dataset), 0), dtype=np.int64)
    return np.concatenate(cols, axis=1)
