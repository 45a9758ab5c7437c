"""ODMN network: shared embedding and bottom, one MDME block per horizon, Mono Units."""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .codec import decode
from .errors import DimensionError
from .nn import DenseLayer, Parameter
from .nn import ops


@dataclass
class ModelConfig:
    embedding_dim: int = 8
    bottom_dims: tuple = (64,)
    tower_hidden: int = 32
    mono: bool = True
    bias_tower: bool = True
    mono_hidden_min: int = 4
    embedding_init: float = 0.1

    def to_dict(self):
        d = dict(self.__dict__)
        d["bottom_dims"] = list(self.bottom_dims)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["bottom_dims"] = tuple(d.get("bottom_dims", (64,)))
        return cls(**d)


def component_rng(seed, name):
    """Independent stream per named component, so optional parts never shift the others' init."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


class Tower:
    """Two-layer perceptron producing logits: relu hidden layer, affine output."""

    def __init__(self, in_dim, hidden, out_dim, seed, name):
        self.hidden = DenseLayer(in_dim, hidden, "relu", rng=component_rng(seed, name + ".0"), name=name + ".0")
        self.out = DenseLayer(hidden, out_dim, "identity", rng=component_rng(seed, name + ".1"), name=name + ".1",
                              init_scale=np.sqrt(1.0 / hidden))
        self.name = name

    @property
    def out_dim(self):
        return self.out.out_dim

    @property
    def parameters(self):
        return self.hidden.parameters + self.out.parameters

    def __call__(self, v):
        return self.out(self.hidden(v))


class MonoUnit:
    """affine -> relu -> affine with every weight matrix flagged non-negative.

    Both layers are monotone non-decreasing in their inputs, so each output
    coordinate is non-decreasing in each coordinate of the upstream distribution.
    """

    def __init__(self, in_dim, out_dim, seed, name, hidden_min=4):
        hidden = max(hidden_min, in_dim)
        self.hidden = DenseLayer(in_dim, hidden, "relu", nonnegative=True, rng=component_rng(seed, name + ".0"),
                                 name=name + ".0", init_scale=1.0 / in_dim)
        self.out = DenseLayer(hidden, out_dim, "identity", nonnegative=True, rng=component_rng(seed, name + ".1"),
                              name=name + ".1", init_scale=1.0 / hidden)
        self.name = name

    @property
    def parameters(self):
        return self.hidden.parameters + self.out.parameters

    def __call__(self, o_prev):
        return mono_unit(o_prev, self)


def mono_unit(o_prev, unit):
    return unit.out(unit.hidden(o_prev))


@dataclass
class TaskOutputs:
    p_c: object
    p_o: object
    q_c: list
    q_o: list
    q_b: list
    o: object

    def numpy(self):
        def val(x):
            return None if x is None else x.value

        return TaskOutputs(val(self.p_c), val(self.p_o), [val(q) for q in self.q_c], [val(q) for q in self.q_o],
                           [val(q) for q in self.q_b], val(self.o))


class TaskModule:
    """The MDME block of one horizon: DCT/DOT plus BCT/BOT/BBT per sub-distribution."""

    def __init__(self, task_scheme, v_dim, config, seed, name, upstream_buckets=None):
        h = config.tower_hidden
        S = task_scheme.n_subdists
        self.scheme = task_scheme
        self.dct = Tower(v_dim, h, S, seed, f"{name}.dct")
        self.dot = Tower(v_dim, h, S, seed, f"{name}.dot")
        self.bct, self.bot, self.bbt = [], [], []
        for s, sd in enumerate(task_scheme.subdists):
            self.bct.append(Tower(v_dim, h, sd.n_buckets, seed, f"{name}.bct{s}"))
            self.bot.append(Tower(v_dim, h, sd.n_buckets, seed, f"{name}.bot{s}"))
            r = sd.n_bias
            self.bbt.append(Tower(v_dim, h, r, seed, f"{name}.bbt{s}") if r > 0 and config.bias_tower else None)
        self.mono_dct = None
        self.mono_bct = [None] * S
        if upstream_buckets is not None and config.mono:
            hm = config.mono_hidden_min
            self.mono_dct = MonoUnit(upstream_buckets, S, seed, f"{name}.mono_dct", hm)
            self.mono_bct = [MonoUnit(upstream_buckets, sd.n_buckets, seed, f"{name}.mono_bct{s}", hm)
                             for s, sd in enumerate(task_scheme.subdists)]

    def towers(self):
        return [self.dct, self.dot] + self.bct + self.bot + [t for t in self.bbt if t is not None]

    def mono_units(self):
        return [u for u in [self.mono_dct] + self.mono_bct if u is not None]

    @property
    def parameters(self):
        ps = [p for t in self.towers() for p in t.parameters]
        return ps + [p for u in self.mono_units() for p in u.parameters]

    def check_scheme(self, ts):
        if self.dct.out_dim != ts.n_subdists or len(self.bct) != ts.n_subdists:
            raise DimensionError(f"tower expects {self.dct.out_dim} sub-distributions, scheme has {ts.n_subdists}")
        for s, sd in enumerate(ts.subdists):
            if self.bct[s].out_dim != sd.n_buckets:
                raise DimensionError(f"sub-distribution {s}: tower has {self.bct[s].out_dim} buckets, "
                                     f"scheme has {sd.n_buckets}")
            if self.bbt[s] is not None and self.bbt[s].out_dim != sd.n_bias:
                raise DimensionError(f"sub-distribution {s}: bias tower has {self.bbt[s].out_dim} slots, "
                                     f"scheme has {sd.n_bias}")


def normalized_bucket_distribution(p_c, q_c):
    """Concatenate p_c[:, s] * q_c[s] over sub-distributions, in global bucket order."""
    p_c = ops.as_node(p_c)
    if p_c.value.ndim == 1:
        return normalized_bucket_distribution(p_c.value[None, :], [np.asarray(q)[None, :] for q in q_c]).value[0]
    parts = [ops.mul(ops.take_cols(p_c, s), q) for s, q in enumerate(q_c)]
    return ops.concat(parts, axis=1) if len(parts) > 1 else ops.as_node(parts[0])


def mdme_forward(v, o_prev, task, scheme=None):
    """Forward pass of one MDME block.

    ``o_prev`` is the upstream normalized bucket distribution (or None for the
    first task); it enters through the Mono Units with its gradient stopped.
    """
    if scheme is not None:
        task.check_scheme(scheme)
    upstream = None if o_prev is None else ops.stop_gradient(o_prev)

    logits = task.dct(v)
    if upstream is not None and task.mono_dct is not None:
        logits = ops.add(logits, task.mono_dct(upstream))
    p_c = ops.softmax(logits)
    p_o = ops.sigmoid(task.dot(v))
    q_c, q_o, q_b = [], [], []
    for s in range(len(task.bct)):
        logits = task.bct[s](v)
        if upstream is not None and task.mono_bct[s] is not None:
            logits = ops.add(logits, task.mono_bct[s](upstream))
        q_c.append(ops.softmax(logits))
        q_o.append(ops.sigmoid(task.bot[s](v)))
        q_b.append(ops.sigmoid(task.bbt[s](v)) if task.bbt[s] is not None else None)
    o = normalized_bucket_distribution(p_c, q_c)
    return TaskOutputs(p_c, p_o, q_c, q_o, q_b, o)


def sharpen(p, temperature):
    """Row-wise p^(1/temperature), renormalized; identity at temperature 1."""
    if temperature == 1.0:
        return p
    return ops.softmax(ops.mul(ops.log(p), 1.0 / temperature))


def soft_estimate(out, task_scheme, temperature=1.0):
    """Differentiable stand-in for the hard decode.

    Expected decode value after sharpening the sub-distribution and bucket
    probabilities with ``temperature``. At 1 this is the plain expectation
    under the normalized bucket distribution; as it goes to 0 the value
    approaches the argmax decode. Buckets without a bias slot (singletons, or
    a disabled bias tower) use their midpoint.
    """
    p_c = sharpen(out.p_c, temperature)
    total = None
    for s, sd in enumerate(task_scheme.subdists):
        lo, width, ns = sd.arrays()
        qc = sharpen(out.q_c[s], temperature)
        if out.q_b[s] is not None and ns.size:
            base = ops.matmul(qc, lo[:, None])
            var = ops.matmul(ops.mul(ops.take_cols(qc, ns), out.q_b[s]), width[ns][:, None])
            inner = ops.add(base, var)
        else:
            inner = ops.matmul(qc, (lo + 0.5 * width)[:, None])
        term = ops.mul(ops.take_cols(p_c, s), inner)
        total = term if total is None else ops.add(total, term)
    return total


class _Backbone:
    """Per-slot embedding tables followed by the shared-bottom perceptron."""

    def _init_backbone(self, slot_sizes, config, seed, slot_names=None):
        self.slot_sizes = [int(v) for v in slot_sizes]
        self.slot_names = list(slot_names) if slot_names else [f"slot{i}" for i in range(len(slot_sizes))]
        d = config.embedding_dim
        self.embeddings = [
            Parameter(component_rng(seed, f"emb{i}").normal(0.0, config.embedding_init, (vocab, d)),
                      f"emb{i}", group="embedding")
            for i, vocab in enumerate(self.slot_sizes)
        ]
        self.bottom = []
        width = d * len(self.slot_sizes)
        self.v_raw_dim = width
        for k, h in enumerate(config.bottom_dims):
            self.bottom.append(DenseLayer(width, h, "relu", rng=component_rng(seed, f"bottom{k}"), name=f"bottom{k}"))
            width = h
        self.v_dim = width

    def embed(self, ids, bottom=True):
        ids = np.asarray(ids)
        if ids.ndim != 2 or ids.shape[1] != len(self.slot_sizes):
            raise DimensionError(f"expected ids of shape (batch, {len(self.slot_sizes)}), got {ids.shape}")
        parts = []
        for i, table in enumerate(self.embeddings):
            col = ids[:, i]
            if col.size and (col.min() < 0 or col.max() >= self.slot_sizes[i]):
                bad = col[(col < 0) | (col >= self.slot_sizes[i])][0]
                raise IndexError(f"id {int(bad)} out of range for slot {self.slot_names[i]!r} "
                                 f"(vocabulary {self.slot_sizes[i]})")
            parts.append(ops.gather_rows(table, col))
        v = ops.concat(parts, axis=1)
        if bottom:
            for layer in self.bottom:
                v = layer(v)
        return v

    def backbone_parameters(self):
        return self.embeddings + [p for layer in self.bottom for p in layer.parameters]


class OdmnModel(_Backbone):
    """Multi-horizon model; task t > 0 sees task t-1's bucket distribution through Mono Units."""

    def __init__(self, slot_sizes, scheme, config=None, seed=0, slot_names=None):
        self.config = config or ModelConfig()
        self.scheme = scheme
        self.seed = seed
        self._init_backbone(slot_sizes, self.config, seed, slot_names)
        self.tasks = []
        prev_m = None
        for t, ts in enumerate(scheme.tasks):
            self.tasks.append(TaskModule(ts, self.v_dim, self.config, seed, f"task{t}", prev_m))
            prev_m = ts.n_buckets

    @property
    def parameters(self):
        return self.backbone_parameters() + [p for task in self.tasks for p in task.parameters]

    def mono_parameters(self):
        return [p for task in self.tasks for u in task.mono_units() for p in u.parameters]

    def zero_mono(self):
        for p in self.mono_parameters():
            p.value[...] = 0.0

    def forward(self, ids):
        v = self.embed(ids)
        outs = []
        o_prev = None
        for task, ts in zip(self.tasks, self.scheme.tasks):
            out = mdme_forward(v, o_prev, task, ts)
            outs.append(out)
            o_prev = out.o
        return outs

    def predict(self, ids, bias_mode=None, batch_size=4096):
        """Hard-decoded estimates, shape (n, T)."""
        if bias_mode is None:
            bias_mode = "tower" if self.config.bias_tower else "midpoint"
        ids = np.asarray(ids)
        res = np.empty((ids.shape[0], len(self.tasks)))
        for lo in range(0, ids.shape[0], batch_size):
            chunk = ids[lo:lo + batch_size]
            for t, out in enumerate(self.forward(chunk)):
                o = out.numpy()
                res[lo:lo + chunk.shape[0], t] = decode(o.p_c, o.q_c, o.q_b, self.scheme.tasks[t], bias_mode)
        return res


class MseBaseline(_Backbone):
    """Same embedding and shared bottom, one linear head per horizon, trained on raw labels."""

    def __init__(self, slot_sizes, n_tasks, config=None, seed=0, slot_names=None, head_bias=None):
        self.config = config or ModelConfig()
        self.seed = seed
        self._init_backbone(slot_sizes, self.config, seed, slot_names)
        self.heads = [DenseLayer(self.v_dim, 1, "identity", rng=component_rng(seed, f"head{t}"), name=f"head{t}",
                                 init_scale=np.sqrt(1.0 / self.v_dim))
                      for t in range(n_tasks)]
        if head_bias is not None:
            for head, b in zip(self.heads, head_bias):
                head.bias.value[...] = b

    @property
    def parameters(self):
        return self.backbone_parameters() + [p for h in self.heads for p in h.parameters]

    def forward(self, ids):
        v = self.embed(ids)
        return [head(v) for head in self.heads]

    def predict(self, ids, batch_size=4096):
        ids = np.asarray(ids)
        res = np.empty((ids.shape[0], len(self.heads)))
        for lo in range(0, ids.shape[0], batch_size):
            outs = self.forward(ids[lo:lo + batch_size])
            res[lo:lo + batch_size] = np.concatenate([o.value for o in outs], axis=1)
        return res
