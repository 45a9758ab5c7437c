import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odmn.codec import BucketConfig, fit_bucketing
from odmn.errors import DimensionError
from odmn.model import (ModelConfig, MonoUnit, MseBaseline, OdmnModel, mdme_forward, mono_unit,
                        normalized_bucket_distribution, soft_estimate)
from odmn.nn import Tape, ops

SLOTS = [3, 5, 4]


def toy_scheme(n_tasks=2):
    rng = np.random.default_rng(0)
    base = np.where(rng.random(400) < 0.3, 0.0, rng.integers(1, 30, 400))
    labels = np.stack([base * (t + 1) for t in range(n_tasks)], axis=1)
    return fit_bucketing(labels, BucketConfig(singletons=(0.0,), buckets=(3,)))


def toy_ids(n, seed=0):
    rng = np.random.default_rng(seed)
    return np.stack([rng.integers(0, s, n) for s in SLOTS], axis=1)


def small_config(**kw):
    return ModelConfig(embedding_dim=4, bottom_dims=(8,), tower_hidden=6, **kw)


def test_embedding_width_before_bottom():
    m = OdmnModel([3, 3], toy_scheme(1), small_config())
    v = m.embed(np.array([[0, 1]]), bottom=False)
    assert v.value.shape == (1, 8)


def test_zero_tables_give_zero_representation():
    m = OdmnModel(SLOTS, toy_scheme(1), small_config())
    for table in m.embeddings:
        table.value[...] = 0.0
    assert np.all(m.embed(toy_ids(4), bottom=False).value == 0.0)


def test_identical_rows_identical_representation():
    m = OdmnModel(SLOTS, toy_scheme(1), small_config())
    ids = np.repeat(toy_ids(1), 3, axis=0)
    v = m.embed(ids).value
    assert np.array_equal(v[0], v[1]) and np.array_equal(v[0], v[2])


def test_out_of_range_id_names_slot():
    m = OdmnModel(SLOTS, toy_scheme(1), small_config(), slot_names=["channel", "region", "recency"])
    with pytest.raises(IndexError, match="region"):
        m.embed(np.array([[0, 9, 0]]))


def test_output_dims_follow_scheme():
    scheme = toy_scheme(2)
    m = OdmnModel(SLOTS, scheme, small_config())
    for task, ts in zip(m.tasks, scheme.tasks):
        assert task.dct.out_dim == task.dot.out.out_dim == ts.n_subdists
        for s, sd in enumerate(ts.subdists):
            assert task.bct[s].out_dim == task.bot[s].out_dim == sd.n_buckets
            if sd.n_bias:
                assert task.bbt[s].out_dim == sd.n_bias
            else:
                assert task.bbt[s] is None
    assert m.tasks[0].mono_units() == []
    units = m.tasks[1].mono_units()
    assert len(units) == scheme.tasks[1].n_subdists + 1
    assert all(p.nonnegative for u in units for p in [u.hidden.weight, u.out.weight])
    assert units[0].hidden.out_dim == max(4, scheme.tasks[0].n_buckets)


def test_scheme_mismatch_rejected():
    m = OdmnModel(SLOTS, toy_scheme(1), small_config())
    other = fit_bucketing(np.arange(50.0), BucketConfig(singletons=(0.0,), buckets=(5,)))
    v = m.embed(toy_ids(2))
    with pytest.raises(DimensionError):
        mdme_forward(v, None, m.tasks[0], other.tasks[0])


def test_normalized_distribution_example():
    o = normalized_bucket_distribution(np.array([0.7, 0.3]), [np.array([0.5, 0.5]), np.array([0.2, 0.8])])
    assert np.allclose(o, [0.35, 0.35, 0.06, 0.24])
    o = normalized_bucket_distribution(np.array([1.0, 0.0]), [np.array([0.1, 0.9]), np.array([0.2, 0.8])])
    assert np.allclose(o, [0.1, 0.9, 0.0, 0.0])


def test_zero_mono_unit_returns_bias():
    unit = MonoUnit(5, 3, seed=0, name="m")
    for p in unit.parameters:
        p.value[...] = 0.0
    unit.out.bias.value[...] = [1.0, -2.0, 0.5]
    rng = np.random.default_rng(1)
    out = mono_unit(rng.dirichlet(np.ones(5), size=4), unit).value
    assert np.array_equal(out, np.tile([1.0, -2.0, 0.5], (4, 1)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_mono_unit_monotone(seed):
    rng = np.random.default_rng(seed)
    unit = MonoUnit(6, 4, seed=seed, name="m")
    for p in unit.parameters:
        p.value[...] = rng.uniform(0, 1, p.shape) if p.nonnegative else rng.normal(size=p.shape)
    a = rng.dirichlet(np.ones(6), size=50)
    b = a + rng.uniform(0, 0.5, a.shape)
    assert np.all(unit(b).value >= unit(a).value)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_outputs_are_distributions(seed):
    rng = np.random.default_rng(seed)
    m = OdmnModel(SLOTS, toy_scheme(2), small_config(), seed=seed)
    for p in m.parameters:
        if p.nonnegative:
            p.value[...] = rng.uniform(0, 2, p.shape)
        else:
            p.value[...] = rng.normal(0, 1.5, p.shape)
    for out in m.forward(toy_ids(16, seed)):
        assert np.allclose(out.p_c.value.sum(axis=1), 1.0, atol=1e-6)
        for q in out.q_c:
            assert np.allclose(q.value.sum(axis=1), 1.0, atol=1e-6)
        assert np.allclose(out.o.value.sum(axis=1), 1.0, atol=1e-6)
        assert np.all((out.o.value >= 0) & (out.o.value <= 1))


def test_zeroed_mono_equals_no_mono():
    scheme = toy_scheme(3)
    with_mono = OdmnModel(SLOTS, scheme, small_config(mono=True), seed=4)
    without = OdmnModel(SLOTS, scheme, small_config(mono=False), seed=4)
    with_mono.zero_mono()
    ids = toy_ids(50, 2)
    for a, b in zip(with_mono.forward(ids), without.forward(ids)):
        assert np.array_equal(a.o.value, b.o.value)
        assert np.array_equal(a.p_o.value, b.p_o.value)
    assert np.array_equal(with_mono.predict(ids), without.predict(ids))


def test_upstream_loss_ignores_downstream_params():
    m = OdmnModel(SLOTS, toy_scheme(2), small_config(), seed=1)
    with Tape() as tape:
        outs = m.forward(toy_ids(8))
        loss = ops.sum(ops.log(outs[0].o))
    grads = tape.backward(loss)
    for p in m.tasks[1].parameters:
        assert not np.any(grads.get(p, np.zeros(1)))


def test_downstream_loss_does_not_flow_through_upstream_distribution():
    m = OdmnModel(SLOTS, toy_scheme(2), small_config(), seed=1)
    with Tape() as tape:
        outs = m.forward(toy_ids(8))
        loss = ops.sum(ops.log(outs[1].o))
    grads = tape.backward(loss)
    # upstream towers are only reachable through the stopped distribution
    for p in m.tasks[0].parameters:
        assert not np.any(grads.get(p, 0.0))
    # the shared representation still receives gradient
    assert any(np.any(grads[p]) for p in m.backbone_parameters())


def test_single_task_is_standalone_mdme():
    scheme = toy_scheme(1)
    m = OdmnModel(SLOTS, scheme, small_config(), seed=3)
    ids = toy_ids(20)
    v = m.embed(ids)
    direct = mdme_forward(v, None, m.tasks[0], scheme.tasks[0])
    assert np.array_equal(m.forward(ids)[0].o.value, direct.o.value)


def test_predict_deterministic():
    m = OdmnModel(SLOTS, toy_scheme(2), small_config(), seed=8)
    ids = toy_ids(30)
    a, b = m.predict(ids), m.predict(ids)
    assert np.array_equal(a, b) and a.shape == (30, 2)
    assert np.array_equal(m.predict(ids, batch_size=7), a)


def test_sharpened_soft_estimate_approaches_hard_decode():
    scheme = toy_scheme(1)
    m = OdmnModel(SLOTS, scheme, small_config(), seed=0)
    out = m.forward(toy_ids(10))[0]
    ts = scheme.tasks[0]
    hard = m.predict(toy_ids(10))[:, 0]
    sharp = soft_estimate(out, ts, temperature=1e-3).value[:, 0]
    assert np.allclose(sharp, hard, atol=1e-6)


def test_soft_estimate_is_expectation_at_unit_temperature():
    scheme = toy_scheme(1)
    ts = scheme.tasks[0]
    m = OdmnModel(SLOTS, scheme, small_config(), seed=0)
    out = m.forward(toy_ids(5))[0]
    o = out.o.value
    lo = np.concatenate([sd.arrays()[0] for sd in ts.subdists])
    width = np.concatenate([sd.arrays()[1] for sd in ts.subdists])
    bias = np.full(o.shape, 0.5)
    for s, sd in enumerate(ts.subdists):
        for j, b in enumerate(sd.buckets):
            if b.slot >= 0:
                bias[:, b.global_index] = out.q_b[s].value[:, b.slot]
    expected = (o * (lo + bias * width)).sum(axis=1)
    assert np.allclose(soft_estimate(out, ts).value[:, 0], expected, atol=1e-12)


def test_baseline_shapes_and_head_bias():
    m = MseBaseline(SLOTS, 3, small_config(), head_bias=[1.0, 2.0, 3.0])
    assert m.predict(toy_ids(4)).shape == (4, 3)
    assert [h.bias.value[0] for h in m.heads] == [1.0, 2.0, 3.0]
