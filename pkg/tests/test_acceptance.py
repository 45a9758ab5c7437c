"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""
import time
import warnings
from dataclasses import replace

import numpy as np
import pytest

from odmn.codec import BucketConfig, decode, encode_labels, fit_bucketing
from odmn.data import generate_synthetic
from odmn.losses import LossSwitches, LossWeights, ordinal_loss, ordinal_point_estimate, total_loss
from odmn.metrics import gini, lorenz, mutual_gini
from odmn.model import ModelConfig, OdmnModel, mono_unit
from odmn.nn import finite_diff_check
from odmn.train import Checkpoint, RunConfig, Trainer, resume, train

SEEDS = range(5)


@pytest.fixture
def announce(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}", flush=True)
        return ok
    return emit


def _tiny_gradcheck_case(seed):
    ds = generate_synthetic(n_users=400, seed=seed)
    labels = ds.labels[:, [2, 3]]
    cut = float(np.median(labels[labels > 0]))
    scheme = fit_bucketing(labels, BucketConfig(singletons=(), cut_points=(cut,), buckets=(3, 3)))
    slots = [5, 4, 6]
    model = OdmnModel(slots, scheme, ModelConfig(embedding_dim=4, bottom_dims=(8,), tower_hidden=6), seed=seed)
    rng = np.random.default_rng(seed)
    rows = rng.choice(len(labels), 8, replace=False)
    ids = np.stack([rng.integers(0, s, 8) for s in slots], axis=1)
    targets = [encode_labels(labels[rows, t], ts) for t, ts in enumerate(scheme.tasks)]
    return model, scheme, ids, targets


def test_criterion_01_gradient_correctness(announce):
    t0 = time.time()
    worst = 0.0
    for seed in SEEDS:
        model, scheme, ids, targets = _tiny_gradcheck_case(seed)
        assert scheme.tasks[0].n_subdists == 2 and all(sd.n_buckets == 3 for ts in scheme.tasks for sd in ts.subdists)
        report = finite_diff_check(lambda: total_loss(model.forward(ids), targets, scheme)[0], model.parameters,
                                   tolerance=1e-4, h=1e-5)
        worst = max(worst, report.max_error)
    elapsed = time.time() - t0
    ok = worst < 1e-4 and elapsed < 60
    announce(1, ok, f"max relative error {worst:.2e} over 5 seeds (< 1e-4), {elapsed:.1f}s (< 60s)")
    assert ok


def _random_curve(rng):
    n = int(rng.integers(1, 60))
    mass = rng.exponential(size=n) * (rng.random(n) < 0.7)
    if mass.sum() == 0:
        mass[0] = 1.0
    return lorenz(rng.normal(size=n), mass)


def test_criterion_02_metric_oracles(announce):
    t0 = time.time()
    checks = [gini([50, 50]) == 0.0]
    for C in range(2, 11):
        top = np.zeros(C)
        top[-1] = 10
        checks.append(gini(top) == (C - 1) / C)
    hand = mutual_gini(lorenz([3, 1], [3, 1]), lorenz([1, 3], [3, 1]))
    checks.append(abs(hand - 0.25) <= 1e-9)
    rng = np.random.default_rng(7)
    mid = (np.arange(1_000_000) + 0.5) / 1_000_000
    worst = 0.0
    for _ in range(100):
        a, b = _random_curve(rng), _random_curve(rng)
        worst = max(worst, abs(mutual_gini(a, b) - np.abs(a(mid) - b(mid)).mean()))
    elapsed = time.time() - t0
    ok = all(checks) and worst < 1e-6 and elapsed < 30
    announce(2, ok, f"gini cases exact, hand case {hand:.12f}, quadrature gap {worst:.1e} (< 1e-6), "
                    f"{elapsed:.1f}s (< 30s)")
    assert ok


def test_criterion_03_ordinal_hand_check(announce):
    value = float(ordinal_loss(np.array([[0.9, 0.2, 0.1]]), [1]).value)
    cases = [([0.9, 0.6, 0.4], 2), ([0.4, 0.3, 0.2], 0), ([0.5, 0.5], 2)]
    exact = all(ordinal_point_estimate(P) == k for P, k in cases)
    ok = abs(value - 0.4339) <= 1e-4 and exact
    announce(3, ok, f"ordinal loss {value:.6f} (0.4339 +/- 1e-4), point-estimate cases exact: {exact}")
    assert ok


def test_criterion_04_codec_round_trip(announce):
    y = generate_synthetic(n_users=100_000, seed=0).labels
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        scheme = fit_bucketing(y)
    worst, clamped = 0.0, 0
    for t, ts in enumerate(scheme.tasks):
        e = encode_labels(y[:, t], ts)
        clamped += e.clamped
        p_c = np.eye(ts.n_subdists)[e.sub]
        q_c, q_b = [], []
        for s, sd in enumerate(ts.subdists):
            q_c.append(np.eye(sd.n_buckets)[np.where(e.sub == s, e.bucket, 0)])
            qb = np.zeros((y.shape[0], max(sd.n_bias, 1)))
            rows = np.nonzero((e.sub == s) & (e.slot >= 0))[0]
            qb[rows, e.slot[rows]] = e.bias[rows]
            q_b.append(qb if sd.n_bias else None)
        worst = max(worst, float(np.max(np.abs(decode(p_c, q_c, q_b, ts) - y[:, t]))))
    ok = worst <= 1e-9 and clamped == 0
    announce(4, ok, f"100k labels x 4 horizons, max round-trip error {worst:.1e} (<= 1e-9), clamped {clamped}")
    assert ok


def test_criterion_05_structural_invariants(announce):
    rng = np.random.default_rng(0)
    ds = generate_synthetic(n_users=2000, seed=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        scheme = fit_bucketing(ds.labels, BucketConfig(singletons=(0.0,), buckets=(5,)))
    slots = [4, 6, 5]
    model = OdmnModel(slots, scheme, ModelConfig(embedding_dim=4, bottom_dims=(8,), tower_hidden=6), seed=0)
    ids = np.stack([rng.integers(0, s, 8) for s in slots], axis=1)
    sum_err = 0.0
    for _ in range(1000):
        for p in model.parameters:
            p.value[...] = rng.uniform(0, 1.5, p.shape) if p.nonnegative else rng.normal(0, 1.5, p.shape)
        for out in model.forward(ids):
            sum_err = max(sum_err, float(np.max(np.abs(out.o.value.sum(axis=1) - 1.0))))

    units = [u for task in model.tasks for u in task.mono_units()]
    mono_ok = True
    for unit in units:
        d = unit.hidden.in_dim
        a = rng.dirichlet(np.ones(d), size=1000)
        b = a + rng.exponential(0.2, size=a.shape) * (rng.random(a.shape) < 0.5)
        mono_ok &= bool(np.all(mono_unit(b, unit).value >= mono_unit(a, unit).value))

    cfg = RunConfig(bucket=BucketConfig(singletons=(0.0,), buckets=(5,)),
                    model=ModelConfig(embedding_dim=4, bottom_dims=(8,), tower_hidden=6), batch_size=16,
                    validate_every_epoch=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tr = Trainer(cfg, ds)
    flagged = [p for p in tr.model.parameters if p.nonnegative]
    neg_seen = False
    for step in range(1000):
        batch = tr.train_idx[rng.choice(tr.train_idx.size, 16, replace=False)]
        tr.step(batch)
        neg_seen |= any(np.any(p.value < 0) for p in flagged)
    ok = sum_err <= 1e-6 and mono_ok and not neg_seen and tr.optimizer.state.step == 1000
    announce(5, ok, f"sum(o)-1 max {sum_err:.1e} over 1000 draws, monotone on 1000 pairs x {len(units)} units: "
                    f"{mono_ok}, {len(flagged)} flagged tensors non-negative through 1000 Adam steps: {not neg_seen}")
    assert ok


# ----------------------------------------------------------------------------- training experiments

_RUNS = {}


def _experiment(seed):
    """Train the variants compared by criteria 6-8 on one synthetic dataset (cached per session)."""
    if seed in _RUNS:
        return _RUNS[seed]
    ds = generate_synthetic(n_users=50_000, seed=seed)
    base = RunConfig(seed=seed, validate_every_epoch=False)
    variants = {
        "odmn": base,
        "alpha0": replace(base, weights=replace(base.weights, alpha=0.0)),
        "mono_off": replace(base, mono=False, calibration=False),
        "baseline": replace(base, baseline=True),
    }
    res = {}
    for name, cfg in variants.items():
        t0 = time.time()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            tr = Trainer(cfg, ds)
            tr.fit()
            rep = tr.evaluate_rows(tr.val_idx)
        last = rep.tasks[-1]
        res[name] = {"violation": rep.violation_any, "mutual_gini": last["mutual_gini"], "ambe": last["ambe"],
                     "seconds": time.time() - t0}
    _RUNS[seed] = res
    return res


def _fmt(values):
    return "[" + ", ".join(f"{v:.4f}" for v in values) + "]"


@pytest.mark.slow
def test_criterion_06_calibration_effect(announce):
    runs = [_experiment(s) for s in SEEDS]
    on = [r["odmn"]["violation"] for r in runs]
    off = [r["alpha0"]["violation"] for r in runs]
    wins = sum(a < b for a, b in zip(on, off))
    seconds = sum(r["odmn"]["seconds"] + r["alpha0"]["seconds"] for r in runs)
    ok = wins >= 4 and seconds < 900
    announce(6, ok, f"violation rate alpha=1 {_fmt(on)} vs alpha=0 {_fmt(off)}: strictly lower in {wins}/5 "
                    f"(need 4), {seconds:.0f}s (< 900s)")
    assert ok


@pytest.mark.slow
def test_criterion_07_mono_effect(announce):
    runs = [_experiment(s) for s in SEEDS]
    on = [r["alpha0"]["mutual_gini"] for r in runs]
    off = [r["mono_off"]["mutual_gini"] for r in runs]
    wins = sum(a <= b for a, b in zip(on, off))
    ok = wins >= 4
    announce(7, ok, f"longest-horizon Mutual Gini mono on {_fmt(on)} vs off {_fmt(off)}: <= in {wins}/5 (need 4)")
    assert ok


@pytest.mark.slow
def test_criterion_08_architecture_vs_baseline(announce):
    runs = [_experiment(s) for s in SEEDS]
    mg = [(r["odmn"]["mutual_gini"], r["baseline"]["mutual_gini"]) for r in runs]
    ab = [(r["odmn"]["ambe"], r["baseline"]["ambe"]) for r in runs]
    wins = sum(m[0] < m[1] and a[0] < a[1] for m, a in zip(mg, ab))
    ok = wins >= 4
    announce(8, ok, f"Mutual Gini ODMN {_fmt(m[0] for m in mg)} vs MSE {_fmt(m[1] for m in mg)}; "
                    f"AMBE ODMN {_fmt(a[0] for a in ab)} vs MSE {_fmt(a[1] for a in ab)}: "
                    f"both lower in {wins}/5 (need 4)")
    assert ok


# ----------------------------------------------------------------------------- determinism and identity

def test_criterion_09_determinism_and_resume(announce, tmp_path):
    ds = generate_synthetic(n_users=1500, seed=9)
    cfg = RunConfig(bucket=BucketConfig(singletons=(0.0,), buckets=(5,)),
                    model=ModelConfig(embedding_dim=4, bottom_dims=(16,), tower_hidden=8), batch_size=64, epochs=7)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = Trainer(cfg, ds)
        a.fit()
        b = Trainer(cfg, ds)
        b.fit()
        same_report = a.evaluate_rows(a.val_idx).to_json() == b.evaluate_rows(b.val_idx).to_json()
        partial, _ = train(cfg, ds, epochs=2)
        partial.save(tmp_path / "ck.npz")
        resumed, _ = resume(Checkpoint.load(tmp_path / "ck.npz"), ds, epochs=5)
    full = a.checkpoint()
    same_params = all(np.array_equal(full.params[k], resumed.params[k]) for k in full.params)
    same_hist = full.history == resumed.history
    ok = same_report and same_params and same_hist
    announce(9, ok, f"repeat run report identical: {same_report}; resume after 2 + 5 epochs matches 7-epoch run "
                    f"(parameters {same_params}, log {same_hist})")
    assert ok


def test_criterion_10_ablation_identity(announce):
    ds = generate_synthetic(n_users=3000, seed=10)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        scheme = fit_bucketing(ds.labels, BucketConfig(singletons=(0.0,), buckets=(6,)))
    slots = [7, 5, 9, 4]
    mc = ModelConfig(embedding_dim=4, bottom_dims=(16,), tower_hidden=8)
    odmn = OdmnModel(slots, scheme, replace(mc, mono=True), seed=3)
    s_variant = OdmnModel(slots, scheme, replace(mc, mono=False), seed=3)
    odmn.zero_mono()
    rng = np.random.default_rng(10)
    ids = np.stack([rng.integers(0, s, 1000) for s in slots], axis=1)
    targets = [encode_labels(ds.labels[:1000, t], ts) for t, ts in enumerate(scheme.tasks)]
    outs_a, outs_b = odmn.forward(ids), s_variant.forward(ids)
    same = True
    for a, b in zip(outs_a, outs_b):
        na, nb = a.numpy(), b.numpy()
        same &= all(np.array_equal(x, y) for x, y in [(na.p_c, nb.p_c), (na.p_o, nb.p_o), (na.o, nb.o)])
        same &= all(np.array_equal(x, y) for x, y in zip(na.q_c + na.q_o, nb.q_c + nb.q_o))
        same &= all((x is None and y is None) or np.array_equal(x, y) for x, y in zip(na.q_b, nb.q_b))
    loss_a = total_loss(outs_a, targets, scheme, LossWeights(alpha=0.0))[0].value
    loss_b = total_loss(outs_b, targets, scheme, LossWeights(), LossSwitches(calibration=False))[0].value
    same_pred = np.array_equal(odmn.predict(ids), s_variant.predict(ids))
    ok = same and loss_a == loss_b and same_pred
    announce(10, ok, f"1000 inputs: forward outputs identical {same}, losses identical {loss_a == loss_b}, "
                     f"decoded estimates identical {same_pred}")
    assert ok
