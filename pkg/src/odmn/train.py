"""Training orchestration, ablation variants, checkpoints and evaluation."""
from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .codec import BucketConfig, BucketingScheme, EncodedTargets, encode_labels, fit_bucketing
from .data import (Dataset, Discretizer, FeatureSchema, canonical_hash, encode_dataset, fit_discretizer,
                   slot_layout)
from .errors import ConfigError, MismatchError
from .losses import LossSwitches, LossWeights, mse_loss, total_loss
from .metrics import evaluate_predictions
from .model import ModelConfig, MseBaseline, OdmnModel
from .nn import Adam, AdamState, Tape

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
CONFIG_FORMAT = 1

# flag sets for the ablation variants; the MDME-level ones model only the longest horizon
ABLATIONS = {
    "NM": dict(single_task=True, bias_tower=False, distillation=False),
    "NMB": dict(single_task=True, bias_tower=True, distillation=False),
    "NMO": dict(single_task=True, bias_tower=False, distillation=True),
    "MDME": dict(single_task=True, bias_tower=True, distillation=True),
    "S": dict(mono=False, calibration=False),
    "SM": dict(mono=True, calibration=False),
    "SC": dict(mono=False, calibration=True),
    "ODMN": dict(mono=True, calibration=True),
}


@dataclass
class RunConfig:
    bucket: BucketConfig = field(default_factory=BucketConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    batch_size: int = 512
    lr_embedding: float = 0.1
    lr_dense: float = 0.05
    epochs: int = 10
    seed: int = 0
    mono: bool = True
    calibration: bool = True
    distillation: bool = True
    bias_tower: bool = True
    single_task: bool = False
    baseline: bool = False
    val_fraction: float = 0.1
    validate_every_epoch: bool = True

    def with_ablation(self, name):
        try:
            flags = ABLATIONS[name.upper()]
        except KeyError:
            raise ConfigError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}") from None
        return replace(self, **flags)

    def model_config(self):
        return replace(self.model, mono=self.mono and not self.single_task, bias_tower=self.bias_tower)

    def switches(self):
        return LossSwitches(distillation=self.distillation, bias=self.bias_tower,
                            calibration=self.calibration and not self.single_task)

    def validate(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.lr_dense <= 0 or self.lr_embedding <= 0:
            raise ConfigError("learning rates must be positive")
        if not self.bucket.buckets or min(self.bucket.buckets) < 1:
            raise ConfigError("bucket counts must be >= 1")

    def to_dict(self):
        return {
            "format_version": CONFIG_FORMAT,
            "bucket": self.bucket.to_dict(),
            "model": self.model.to_dict(),
            "weights": dict(self.weights.__dict__),
            **{k: getattr(self, k) for k in ("batch_size", "lr_embedding", "lr_dense", "epochs", "seed", "mono",
                                             "calibration", "distillation", "bias_tower", "single_task", "baseline",
                                             "val_fraction", "validate_every_epoch")},
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        version = d.pop("format_version", CONFIG_FORMAT)
        if version != CONFIG_FORMAT:
            raise ConfigError(f"unsupported config format {version!r}")
        kw = {}
        if "bucket" in d:
            kw["bucket"] = BucketConfig.from_dict(d.pop("bucket"))
        if "model" in d:
            kw["model"] = ModelConfig.from_dict(d.pop("model"))
        if "weights" in d:
            kw["weights"] = LossWeights(**d.pop("weights"))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**kw, **d)

    def hash(self):
        return canonical_hash(self.to_dict())


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return RunConfig.from_dict(json.load(fh))


# --------------------------------------------------------------------------- RNG helpers

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x):
    with np.errstate(over="ignore"):
        z = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
        z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
        z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
        return z ^ (z >> np.uint64(31))


def split_indices(n, seed, val_fraction=0.1):
    """Deterministic train/validation split from a seeded hash of each row index."""
    h = _splitmix64(np.arange(n, dtype=np.uint64) ^ _splitmix64(np.uint64(seed)))
    u = (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)
    val = u < val_fraction
    return np.nonzero(~val)[0], np.nonzero(val)[0]


def epoch_order(n, seed, epoch):
    """Shuffle order from a counter-based generator keyed by (seed, epoch)."""
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, epoch], dtype=np.uint64)))
    return rng.permutation(n)


def _slice(enc, idx):
    return EncodedTargets(enc.sub[idx], enc.bucket[idx], enc.global_bucket[idx], enc.bias[idx], enc.slot[idx])


# --------------------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    kind: str  # "odmn" or "baseline"
    config: dict
    schema: dict
    discretizer: dict
    scheme: dict
    slot_sizes: list
    slot_names: list
    task_index: list  # dataset label columns modelled, in order
    params: dict
    adam: dict
    epoch: int
    history: list = field(default_factory=list)

    @property
    def schema_hash(self):
        return canonical_hash(self.schema)

    @property
    def scheme_hash(self):
        return canonical_hash(self.scheme)

    def save(self, path):
        meta = {
            "format_version": CHECKPOINT_FORMAT, "kind": self.kind, "config": self.config,
            "config_hash": canonical_hash(self.config), "schema": self.schema, "schema_hash": self.schema_hash,
            "discretizer": self.discretizer, "scheme": self.scheme, "scheme_hash": self.scheme_hash,
            "slot_sizes": self.slot_sizes, "slot_names": self.slot_names, "task_index": self.task_index,
            "epoch": self.epoch, "history": self.history,
            "adam": {k: v for k, v in self.adam.items() if k not in ("m", "v")},
            "param_names": list(self.params),
        }
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        arrays.update({f"adam_m/{k}": v for k, v in self.adam.get("m", {}).items()})
        arrays.update({f"adam_v/{k}": v for k, v in self.adam.get("v", {}).items()})
        buf = io.BytesIO()
        np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(z["__meta__"].tobytes().decode())
            if meta.get("format_version") != CHECKPOINT_FORMAT:
                raise MismatchError(f"unsupported checkpoint format {meta.get('format_version')!r}")
            for key, obj in (("schema_hash", meta["schema"]), ("scheme_hash", meta["scheme"]),
                             ("config_hash", meta["config"])):
                if canonical_hash(obj) != meta[key]:
                    raise MismatchError(f"checkpoint {key} {meta[key]} does not match its contents "
                                        f"({canonical_hash(obj)})")
            params = {k: z[f"param/{k}"].copy() for k in meta["param_names"]}
            adam = dict(meta["adam"])
            adam["m"] = {k[7:]: z[k].copy() for k in z.files if k.startswith("adam_m/")}
            adam["v"] = {k[7:]: z[k].copy() for k in z.files if k.startswith("adam_v/")}
        return cls(meta["kind"], meta["config"], meta["schema"], meta["discretizer"], meta["scheme"],
                   meta["slot_sizes"], meta["slot_names"], meta["task_index"], params, adam, meta["epoch"],
                   meta.get("history", []))


# --------------------------------------------------------------------------- trainer

def _build_model(kind, config, slot_sizes, slot_names, scheme, head_bias=None):
    if kind == "baseline":
        return MseBaseline(slot_sizes, scheme.n_tasks, config.model_config(), config.seed, slot_names, head_bias)
    return OdmnModel(slot_sizes, scheme, config.model_config(), config.seed, slot_names)


class Trainer:
    """Holds the fitted preprocessing, the model and the optimizer for one run."""

    def __init__(self, config, dataset, checkpoint=None):
        config.validate()
        self.config = config
        self.dataset = dataset
        self.kind = "baseline" if config.baseline else "odmn"
        schema = dataset.schema
        T = len(schema.horizons)
        self.task_index = [T - 1] if config.single_task else list(range(T))
        self.horizons = [schema.horizons[t] for t in self.task_index]
        if len(dataset) < 2:
            raise ConfigError("need at least two rows to train")
        self.train_idx, self.val_idx = split_indices(len(dataset), config.seed, config.val_fraction)
        if self.train_idx.size == 0:
            raise ConfigError("empty training split")
        train = dataset.subset(self.train_idx)
        labels = dataset.labels[:, self.task_index]

        if checkpoint is None:
            self.discretizer = fit_discretizer(train, schema)
            self.scheme = fit_bucketing(labels[self.train_idx], config.bucket)
        else:
            if checkpoint.schema_hash != schema.hash():
                raise MismatchError(f"schema hash mismatch: checkpoint {checkpoint.schema_hash}, "
                                    f"dataset {schema.hash()}")
            self.discretizer = Discretizer.from_dict(checkpoint.discretizer)
            self.scheme = BucketingScheme.from_dict(checkpoint.scheme)
        self.slot_names, self.slot_sizes = slot_layout(schema, self.discretizer)
        self.ids = encode_dataset(dataset, self.discretizer, schema)
        self.labels = labels
        self.targets = [encode_labels(labels[:, t], ts) for t, ts in enumerate(self.scheme.tasks)]
        for t, ts in enumerate(self.scheme.tasks):
            clamps = encode_labels(labels[self.train_idx, t], ts).clamped
            if clamps:
                raise ConfigError(f"task {t}: {clamps} training labels fall outside the bucketing scheme")
        head_bias = labels[self.train_idx].mean(axis=0) if self.kind == "baseline" else None
        self.model = _build_model(self.kind, config, self.slot_sizes, self.slot_names, self.scheme, head_bias)
        self.optimizer = Adam(self.model.parameters, lr=config.lr_dense,
                              group_lr={"embedding": config.lr_embedding, "dense": config.lr_dense})
        self.epoch = 0
        self.history = []
        if checkpoint is not None:
            self._restore(checkpoint)

    # ------------------------------------------------------------------ state

    def _restore(self, ck):
        names = {p.name: p for p in self.model.parameters}
        if set(names) != set(ck.params):
            raise MismatchError("checkpoint parameters do not match the model built from its config")
        for k, v in ck.params.items():
            if names[k].value.shape != v.shape:
                raise MismatchError(f"parameter {k}: checkpoint shape {v.shape}, model {names[k].value.shape}")
            names[k].value[...] = v
        a = ck.adam
        self.optimizer.state = AdamState(a["step"], a["beta1"], a["beta2"], a["epsilon"],
                                         {k: v.copy() for k, v in a["m"].items()},
                                         {k: v.copy() for k, v in a["v"].items()})
        self.epoch = ck.epoch
        self.history = list(ck.history)

    def checkpoint(self):
        st = self.optimizer.state
        return Checkpoint(
            self.kind, self.config.to_dict(), self.dataset.schema.to_dict(), self.discretizer.to_dict(),
            self.scheme.to_dict(), list(self.slot_sizes), list(self.slot_names), list(self.task_index),
            {p.name: p.value.copy() for p in self.model.parameters},
            {"step": st.step, "beta1": st.beta1, "beta2": st.beta2, "epsilon": st.epsilon,
             "m": {k: v.copy() for k, v in st.m.items()}, "v": {k: v.copy() for k, v in st.v.items()}},
            self.epoch, list(self.history))

    # ------------------------------------------------------------------ loop

    def step(self, batch):
        ids = self.ids[batch]
        with Tape() as tape:
            if self.kind == "baseline":
                loss = mse_loss(self.model.forward(ids), self.labels[batch])
                parts = {"mse": float(loss.value), "total": float(loss.value)}
            else:
                outs = self.model.forward(ids)
                tg = [_slice(enc, batch) for enc in self.targets]
                loss, parts = total_loss(outs, tg, self.scheme, self.config.weights, self.config.switches())
        grads = tape.backward(loss)
        self.optimizer.step(grads)
        return parts

    def run_epoch(self):
        order = self.train_idx[epoch_order(self.train_idx.size, self.config.seed, self.epoch)]
        bs = self.config.batch_size
        sums, weight = {}, 0
        for lo in range(0, order.size, bs):
            batch = order[lo:lo + bs]
            parts = self.step(batch)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v * batch.size
            weight += batch.size
        entry = {"epoch": self.epoch, "loss": {k: v / weight for k, v in sums.items()}}
        if self.config.validate_every_epoch and self.val_idx.size:
            rep = self.evaluate_rows(self.val_idx)
            entry["validation"] = rep.to_dict() if rep is not None else None
        self.epoch += 1
        self.history.append(entry)
        log.info("epoch %d loss %.6f", entry["epoch"], entry["loss"]["total"])
        return entry

    def fit(self, epochs=None):
        target = self.config.epochs if epochs is None else self.epoch + epochs
        while self.epoch < target:
            self.run_epoch()
        return self.history

    def predict_rows(self, rows):
        return self.model.predict(self.ids[rows])

    def evaluate_rows(self, rows):
        y = self.labels[rows]
        if np.any(y.mean(axis=0) <= 0):
            return None
        return evaluate_predictions(y, self.predict_rows(rows), self.horizons, self.scheme)


def train(config, dataset, epochs=None):
    """Train ODMN (or the baseline when ``config.baseline``); returns (checkpoint, history)."""
    tr = Trainer(config, dataset)
    tr.fit(epochs)
    return tr.checkpoint(), tr.history


def train_baseline(config, dataset, epochs=None):
    return train(replace(config, baseline=True), dataset, epochs)


def resume(checkpoint, dataset, epochs):
    tr = Trainer(RunConfig.from_dict(checkpoint.config), dataset, checkpoint)
    tr.fit(epochs)
    return tr.checkpoint(), tr.history


# --------------------------------------------------------------------------- inference

def load_model(checkpoint):
    config = RunConfig.from_dict(checkpoint.config)
    scheme = BucketingScheme.from_dict(checkpoint.scheme)
    model = _build_model(checkpoint.kind, config, checkpoint.slot_sizes, checkpoint.slot_names, scheme)
    names = {p.name: p for p in model.parameters}
    for k, v in checkpoint.params.items():
        names[k].value[...] = v
    return model, scheme, Discretizer.from_dict(checkpoint.discretizer)


def predict(checkpoint, dataset):
    """(n, T_model) estimates for every row of ``dataset``."""
    if checkpoint.schema_hash != dataset.schema.hash():
        raise MismatchError(f"schema hash mismatch: checkpoint {checkpoint.schema_hash}, "
                            f"dataset {dataset.schema.hash()}")
    model, _, disc = load_model(checkpoint)
    return model.predict(encode_dataset(dataset, disc, dataset.schema))


def evaluate(checkpoint, dataset, expected_scheme_hash=None):
    """EvalReport of a checkpoint on every row of ``dataset``."""
    if expected_scheme_hash is not None and expected_scheme_hash != checkpoint.scheme_hash:
        raise MismatchError(f"scheme hash mismatch: expected {expected_scheme_hash}, "
                            f"checkpoint {checkpoint.scheme_hash}")
    preds = predict(checkpoint, dataset)
    _, scheme, _ = load_model(checkpoint)
    horizons = [dataset.schema.horizons[t] for t in checkpoint.task_index]
    return evaluate_predictions(dataset.labels[:, checkpoint.task_index], preds, horizons, scheme)


__all__ = ["ABLATIONS", "RunConfig", "Checkpoint", "Trainer", "train", "train_baseline", "resume", "evaluate",
           "predict", "load_model", "load_config", "split_indices", "epoch_order", "Dataset", "FeatureSchema"]
